from ocql.core import ProcessEnv, EnvironmentSpec, Trajectory, rollout
import ocql.envs
