"""Contact-allowed goal reaching for a redundant 7-DOF arm.

Simulator with penalty contact and mass-spring deformables, operational/null
space impedance control, receding-horizon planning with a hybrid
CMA-ES/gradient solver, an RRT* collision-free baseline, and a benchmark CLI.
"""

from .control import ControlGains, ControlLaw, ControlReferences, control_torque, \
    null_torque, operational_torque
from .envs import Environment, Workspace, load_environment, make_ball_obstacle, \
    make_environment, make_free_space, make_wall_obstacle, sample_target, \
    save_environment
from .planner import Action, EpisodeMetrics, PlannerConfig, SolverFailure, \
    plan_step, run_episode, stage_cost
from .robot import JointState, RobotModel, TaskSpaceQuantities, bias_forces, \
    forward_kinematics, gravity_vector, jacobian, load_robot_model, mass_matrix, \
    task_space_quantities
from .rrt import IKFailure, JointPath, collision_check, rrt_star_plan, track_path
from .sim import ContactReport, DeformableWall, InvalidTessellation, \
    NumericalBlowup, RigidSphere, SceneSpec, WorldState, build_deformable_wall, \
    contact_force, rollout, rollout_cost_gradient, step
from .solver import SolverConfig, SolverState, gradient_refine, optimize, \
    repair_and_penalize
from .spatial import Pose, PoseError, integrate_pose, pose_error, \
    translational_distance

__version__ = "0.1.0"
