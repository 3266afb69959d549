from .features import (FeatureExtractor, FrameParams, LogFbank, Waveform, filterbank, load_features,
                       log_fbank, save_features, stft)
from .wavio import read_wav, write_wav

__all__ = ["FeatureExtractor", "FrameParams", "LogFbank", "Waveform", "filterbank", "log_fbank",
           "stft", "save_features", "load_features", "read_wav", "write_wav"]
