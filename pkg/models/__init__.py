from .checkpoint import load_model, save_model
from .decoders import GenerativeModel, GridToyModel, LinearDecoder, MlpDecoder, ModelInput, TrainingMeta
from .training import TrainConfig, generate, sample_inputs, train_decoder
