import gym
from gym.envs.registration import register, registry

# Process
# ----------------------------------------
PROCESS_ENV_IDS = {
    "cs1": "PhycocyaninFedBatch-v0",
    "cs2": "SemiBatchReactor-v0",
    "synthetic": "GaussianThreshold-v0",
}

if "PhycocyaninFedBatch-v0" not in registry:
    register(
        id="PhycocyaninFedBatch-v0",
        entry_point="ocql.envs.process:PhycocyaninFedBatchEnv",
        max_episode_steps=12,
    )
if "SemiBatchReactor-v0" not in registry:
    register(
        id="SemiBatchReactor-v0",
        entry_point="ocql.envs.process:SemiBatchReactorEnv",
        max_episode_steps=10,
    )
if "GaussianThreshold-v0" not in registry:
    register(
        id="GaussianThreshold-v0",
        entry_point="ocql.envs.process:GaussianThresholdEnv",
        max_episode_steps=1,
    )


def make_env(env_id: str, **kwargs):
    """
    Build a process environment by gym id or by its short name (cs1, cs2, synthetic).
    The gym wrappers are stripped, the pure rollout interface lives on the raw env.
    """
    env_id = PROCESS_ENV_IDS.get(env_id, env_id)
    return gym.make(env_id, disable_env_checker=True, **kwargs).unwrapped
