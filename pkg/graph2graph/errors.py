class G2GError(Exception):
    """Base class for every error raised by the graph2graph package"""


class ConfigError(G2GError):
    pass


class GraphError(G2GError):
    """Invalid graph, adjacency-vector sequence or width overflow"""


class ShapeError(G2GError):
    def __init__(self, op, *shapes, detail=None):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        shown = ' vs '.join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TapeError(G2GError):
    pass


class NumericalError(G2GError):
    pass


class ModelError(G2GError):
    pass


class CheckpointError(G2GError):
    pass


class LossError(G2GError):
    pass


class DataError(G2GError):
    pass
