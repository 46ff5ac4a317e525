from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import Adam, DivergenceError, MlpNet, policy_act
from .pg import PgAgent, discounted_returns, pg_gradient, pg_objective, pg_update, pg_update_arrays
from .replay import Batch, InsufficientSamples, ReplayBuffer
from .td3 import Td3Agent, Td3Config, td3_update
