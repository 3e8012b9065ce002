"""Non-neural front-end, simulation, augmentation, feature, scoring and fusion tools for meeting ASR."""

from .audio import AudioBuffer, AudioError, StftConfig, istft, read_wav, resample, si_sdr, stft, write_wav
from .augment import OverlapPolicy, Utterance, mix_noise, pitch_shift, simulate_overlap, speed_perturb
from .beamformer import BeamformConfig, beamform, gcc_phat
from .features import FbankConfig, SpecAugmentConfig, compute_features, fbank, pitch_features, spec_augment
from .room import ArraySpec, RoomSpec, generate_rir, schroeder_t60, simulate_array
from .rover import AlignCosts
from .sot import SotTranscript, cer, permutation_cer, sot_serialize, sot_split
from .wpe import WpeConfig, wpe_audio

__version__ = "0.1.0"
