"""Exception hierarchy. Every error knows which module raised it so the CLI
can print a module-qualified message."""


class NalustockError(Exception):
    module = "nalustock"

    def qualified(self) -> str:
        return f"[{self.module}] {self}"


class ShapeError(NalustockError, ValueError):
    module = "tensor"


class AutodiffError(NalustockError, RuntimeError):
    module = "autodiff"


class LayerError(NalustockError, ValueError):
    module = "layers"


class DataError(NalustockError, ValueError):
    module = "data"


class ModelError(NalustockError, ValueError):
    module = "models"


class TrainingError(NalustockError, RuntimeError):
    module = "training"


class DivergenceError(TrainingError):
    def __init__(self, epoch: int, iteration: int, loss: float):
        super().__init__(
            f"loss became non-finite ({loss}) at epoch {epoch}, iteration {iteration}"
        )
        self.epoch = epoch
        self.iteration = iteration
        self.loss = loss


class CheckpointError(TrainingError):
    pass


class BenchError(NalustockError, ValueError):
    module = "benchmarks"


class ConfigError(NalustockError, ValueError):
    module = "cli"
