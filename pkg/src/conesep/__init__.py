"""Joint localization and separation of multichannel speech by binary search over angular regions."""

from .dsp import Spectrogram, Waveform, energy, istft, read_wav, resample, shift_channel, stft, write_wav
from .geometry import FarFieldPoint, MicArray, load_array, paper6, pre_shift, respeaker4, tdoa_samples, unshift
from .room import RenderedScene, RoomConfig, SceneSpec, SourceSpec, compute_rir, render_scene, sample_scene
from .search import CandidateSource, SearchConfig, linear_sweep, nms, separate_and_localize, track_moving
from .separation import AngularRegion, DSBMaskSeparator, OracleSeparator, WindowLadder, region_target

__version__ = "0.1.0"
