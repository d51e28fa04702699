from .kalman import KalmanTrack, kalman_step
from .mel import MelSpec, mel_filterbank, mel_spectrogram
from .motion import MotionSeries, mouth_motion_signal
from .ring import FaceBox, FrameRecord, FrameRing, ring_insert, ring_window
from .stages import WAV2LIP_FP32, WAV2LIP_TRT_FP16, mock_face_detect, mock_lipsync

__all__ = [
    "WAV2LIP_FP32",
    "WAV2LIP_TRT_FP16",
    "FaceBox",
    "FrameRecord",
    "FrameRing",
    "KalmanTrack",
    "MelSpec",
    "MotionSeries",
    "kalman_step",
    "mel_filterbank",
    "mel_spectrogram",
    "mock_face_detect",
    "mock_lipsync",
    "mouth_motion_signal",
    "ring_insert",
    "ring_window",
]
