"""Neural packet loss concealment toolkit.

Loss-trace simulation, a semantic-prediction-plus-synthesis concealment
model with contrastive pretraining and adversarial vocoder training,
streaming packet-by-packet inference with long-burst fades, and objective
evaluation.
"""

from .config import RunConfig, paper_preset
from .dsp import AudioClip, read_wav, write_wav
from .model import PLCModel, conceal
from .streaming import StreamSession
from .traces import FrameLossMap, MarkovModel, PacketTrace

__all__ = [
    "AudioClip",
    "FrameLossMap",
    "MarkovModel",
    "PacketTrace",
    "PLCModel",
    "RunConfig",
    "StreamSession",
    "conceal",
    "paper_preset",
    "read_wav",
    "write_wav",
]

__version__ = "0.1.0"
