"""2D grid buildings with raycast observations and three navigation tasks."""

from .geodesic import distance_field, geodesic_distance
from .tasks import (
    ACTIONS,
    DEFAULT_MAX_STEPS,
    EXPLORATION,
    MOVE_FORWARD,
    PLANNING,
    REWARD_VARIANTS,
    TASKS,
    TURN_LEFT,
    TURN_RIGHT,
    VISUAL_TARGET,
    AgentState,
    EpisodeFinished,
    EpisodeSpec,
    NavEnv,
    Observation,
    OccupancyLedger,
    StepEvent,
    TaskConfig,
    exploration_reward,
    planning_reward,
    ray_angles,
    render,
    place_crate,
    sample_episode,
    shortest_path_length,
    step,
    visual_target_reward,
)
from .world import (
    CLASS_NAMES,
    CRATE,
    DOOR,
    FLOOR,
    FURNITURE,
    WALL,
    BuildingMap,
    BuildingParams,
    DatasetSplit,
    GenerationError,
    free_space_connected,
    generate_building,
    load_building,
    save_building,
    split_dataset,
)
