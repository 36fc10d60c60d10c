from .base import Layer, Quarantined, Source, SourceCursor, Universe, UniverseSource, origin
from .fixtures import FixtureSource, load_universe, write_universe
from .live import LiveSource
from .simulator import SimConfig, generate_lifecycle


class SimulatorSource(UniverseSource):
    def __init__(self, config: SimConfig):
        super().__init__(generate_lifecycle(config))
        self.config = config


__all__ = [
    "FixtureSource", "Layer", "LiveSource", "Quarantined", "SimConfig", "SimulatorSource",
    "Source", "SourceCursor", "Universe", "UniverseSource", "generate_lifecycle",
    "load_universe", "origin", "write_universe",
]
