from .config import RunConfig, DataConfig, TrainConfig, dump_config, load_config, parse_config
from .streams import TaskStream, load_idx_stream, make_synthetic_stream
from .train import RunRecord, run_ablation_suite, train
