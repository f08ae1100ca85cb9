from ocql.envs.process.phycocyanin import PhycocyaninFedBatchEnv, PHYCOCYANIN_SPEC
from ocql.envs.process.semi_batch_reactor import SemiBatchReactorEnv, SEMI_BATCH_SPEC
from ocql.envs.process.threshold import GaussianThresholdEnv, THRESHOLD_SPEC
