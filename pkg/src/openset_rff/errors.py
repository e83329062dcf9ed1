"""Exception types raised across the package."""


class OrffError(Exception):
    """Base class for all package errors."""


class ConfigError(OrffError, ValueError):
    """Invalid user-supplied configuration (CLI exit code 2)."""


class EmptyPopulation(ConfigError):
    def __init__(self):
        super().__init__("empty population")


class ImpairmentOverflow(OrffError, ArithmeticError):
    def __init__(self, tx_id=None):
        msg = "impairment overflow"
        if tx_id is not None:
            msg += f" (tx_id={tx_id})"
        super().__init__(msg)


class CorruptCorpus(OrffError):
    def __init__(self, detail, offset):
        self.offset = offset
        super().__init__(f"corrupt corpus at byte offset {offset}: {detail}")


class ManifestMismatch(OrffError):
    def __init__(self, detail):
        super().__init__(f"manifest mismatch: {detail}")


class ShapeError(OrffError, ValueError):
    def __init__(self, layer_index, detail):
        self.layer_index = layer_index
        super().__init__(f"shape error at layer {layer_index}: {detail}")


class NonFiniteLoss(OrffError, ArithmeticError):
    def __init__(self):
        super().__init__("non-finite loss input")


class TrainingDiverged(OrffError, ArithmeticError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}")


class SpecHashMismatch(OrffError):
    def __init__(self, expected, found):
        super().__init__(f"model file spec hash {found:#018x} does not match network {expected:#018x}")


class LabelOutOfRange(OrffError, ValueError):
    def __init__(self, label, num_classes):
        super().__init__(f"label out of range: {label} not in [0, {num_classes})")


class DegeneratePointCloud(OrffError, ValueError):
    def __init__(self, rank, dim):
        super().__init__(f"degenerate point cloud: affine rank {rank} < dimension {dim}")


class MveeNotConverged(OrffError):
    def __init__(self, violation, iterations):
        self.violation = violation
        super().__init__(f"mvee not converged after {iterations} iterations (violation {violation:.3e})")


class NonFiniteObjective(OrffError, ArithmeticError):
    def __init__(self):
        super().__init__("non-finite objective")


class Algorithm1Unstable(OrffError):
    def __init__(self, iteration, aborted, total):
        super().__init__(
            f"algorithm1 unstable: {aborted}/{total} latent optimizations aborted in iteration {iteration}"
        )


class InvalidSplitSpec(ConfigError):
    def __init__(self, detail):
        super().__init__(f"invalid split spec: {detail}")


class PopulationTooSmall(ConfigError):
    def __init__(self, needed, available):
        super().__init__(f"population too small: need {needed} transmitters, corpus has {available}")


class EmptyTestSet(OrffError, ValueError):
    def __init__(self):
        super().__init__("empty test set")
