from ocql.envs import register_env
from ocql.envs.register_env import make_env, PROCESS_ENV_IDS
