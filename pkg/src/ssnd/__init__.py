"""Speaker separation via neural diarisation: features, criteria, stream
assembly, simulation and scoring."""

from .core import (
    ActivityMatrix,
    FrameGrid,
    MultichannelAudio,
    PosteriorMatrix,
    SpeakerInterval,
    SSNDError,
    activity_to_intervals,
    intervals_to_activity,
    read_rttm,
    write_rttm,
)

__version__ = "0.1.0"
