"""Declarative sequential CNN configurations with shape inference.

A configuration is an ordered list of layer specs plus an input shape.
Shape inference applies the valid-convolution / pooling / dense rules
layer by layer and names the first inconsistent layer, so a bad
architecture fails before any parameter is allocated.

The reference architecture reproduces a published layer listing whose
printed output sizes are partly inconsistent with its own layer
algebra; the builder trusts the algebra and surfaces the contradictory
declared rows as warnings.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

from .exceptions import ShapeError
from .nn.engine import POOL, conv_out_size

LAYER_KINDS = ("conv", "relu", "maxpool", "globalpool", "dense", "dropout", "softmax", "sigmoid")

# required / forbidden optional fields per kind
_FIELD_RULES = {
    "conv": ("kernel", "out_channels"),
    "dense": ("units",),
    "dropout": ("rate",),
    "relu": (),
    "maxpool": (),
    "globalpool": (),
    "softmax": (),
    "sigmoid": (),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: Optional[Tuple[int, int]] = None
    out_channels: Optional[int] = None
    units: Optional[int] = None
    rate: Optional[float] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError("unknown layer kind %r" % (self.kind,))
        required = _FIELD_RULES[self.kind]
        for name in ("kernel", "out_channels", "units", "rate"):
            value = getattr(self, name)
            if name in required and value is None:
                raise ShapeError("%s layer requires %s" % (self.kind, name))
            if name not in required and value is not None:
                raise ShapeError("%s layer does not take %s" % (self.kind, name))
        if self.kernel is not None:
            kernel = tuple(int(k) for k in self.kernel)
            if len(kernel) != 2 or min(kernel) < 1:
                raise ShapeError("kernel must be two positive ints, got %r" % (self.kernel,))
            object.__setattr__(self, "kernel", kernel)
        if self.out_channels is not None and self.out_channels < 1:
            raise ShapeError("out_channels must be >= 1")
        if self.units is not None and self.units < 1:
            raise ShapeError("units must be >= 1")
        if self.rate is not None and not 0 <= self.rate < 1:
            raise ShapeError("dropout rate must be in [0, 1)")

    @property
    def has_params(self):
        return self.kind in ("conv", "dense")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kernel is not None:
            d["kernel"] = list(self.kernel)
        for name in ("out_channels", "units", "rate"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        return d

    @classmethod
    def from_dict(cls, d):
        kernel = d.get("kernel")
        return cls(
            kind=d.get("kind"),
            kernel=tuple(kernel) if kernel is not None else None,
            out_channels=d.get("out_channels"),
            units=d.get("units"),
            rate=d.get("rate"),
        )


def _format_shape(shape):
    if isinstance(shape, tuple):
        return " x ".join(str(s) for s in shape)
    return str(shape)


def _infer_layer(index, spec, shape):
    label = "layer %d (%s)" % (index, spec.kind)
    if spec.kind == "conv":
        if len(shape) != 3:
            raise ShapeError("%s: needs a C x H x W input, got %s" % (label, _format_shape(shape)))
        c, h, w = shape
        kh, kw = spec.kernel
        if kh > h or kw > w:
            raise ShapeError(
                "%s: kernel %dx%d exceeds input %s" % (label, kh, kw, _format_shape(shape))
            )
        return (spec.out_channels, conv_out_size(h, kh), conv_out_size(w, kw))
    if spec.kind == "maxpool":
        if len(shape) != 3:
            raise ShapeError("%s: needs a C x H x W input, got %s" % (label, _format_shape(shape)))
        c, h, w = shape
        if h < POOL or w < POOL:
            raise ShapeError("%s: input %s smaller than the %dx%d window"
                             % (label, _format_shape(shape), POOL, POOL))
        return (c, h // POOL, w // POOL)
    if spec.kind == "globalpool":
        if len(shape) != 3:
            raise ShapeError("%s: needs a C x H x W input, got %s" % (label, _format_shape(shape)))
        return (shape[0],)
    if spec.kind == "dense":
        if len(shape) != 1:
            raise ShapeError(
                "%s: needs a flat input but got %s; add a global pool first"
                % (label, _format_shape(shape))
            )
        return (spec.units,)
    if spec.kind == "softmax":
        if len(shape) != 1:
            raise ShapeError("%s: needs a flat input, got %s" % (label, _format_shape(shape)))
        return shape
    # relu, dropout, sigmoid are elementwise
    return shape


@dataclass(frozen=True)
class ArchConfig:
    input_shape: Tuple[int, int, int]
    layers: tuple
    num_classes: int

    def __post_init__(self):
        shape = tuple(int(s) for s in self.input_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ShapeError("input_shape must be three positive ints (C, H, W)")
        object.__setattr__(self, "input_shape", shape)
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ShapeError("architecture needs at least one layer")
        if self.num_classes < 2:
            raise ShapeError("num_classes must be >= 2")
        shapes = infer_shapes(self)
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(
                "final layer emits %s but num_classes is %d"
                % (_format_shape(shapes[-1]), self.num_classes)
            )

    @property
    def parameterized_indices(self):
        """Indices of conv/dense layers, input side first."""
        return tuple(i for i, spec in enumerate(self.layers) if spec.has_params)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [spec.to_dict() for spec in self.layers],
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                input_shape=tuple(d["input_shape"]),
                layers=tuple(LayerSpec.from_dict(layer) for layer in d["layers"]),
                num_classes=int(d["num_classes"]),
            )
        except (KeyError, TypeError) as exc:
            raise ShapeError("malformed architecture description: %s" % (exc,)) from exc


def infer_shapes(config):
    """Output shape after every layer, in order.

    Raises ShapeError naming the first layer whose input is
    incompatible.
    """
    shape = tuple(config.input_shape)
    shapes = []
    for index, spec in enumerate(config.layers):
        shape = _infer_layer(index, spec, shape)
        shapes.append(shape)
    return shapes


def _scaled(value, width, floor):
    return max(floor, int(round(value * width)))


def reference_cnn_config(input_side, num_classes=7, head="softmax", dropout_rate=0.5,
                         width=1.0):
    """The reference CNN: six valid convolutions, one max pool, global
    average pooling, and a dense head.

    ``head`` selects the canonical softmax output or the opt-in sigmoid
    variant.  ``width`` scales channel and dense-unit counts for
    reduced-budget runs; 1.0 is the architecture as published.  A
    positive ``dropout_rate`` inserts one dropout layer after the
    hidden dense ReLU, the only regularization point in this design.
    """
    if input_side < 32:
        raise ShapeError("input_side must be >= 32, got %r" % (input_side,))
    if head not in ("softmax", "sigmoid"):
        raise ShapeError("head must be 'softmax' or 'sigmoid', got %r" % (head,))
    if not 0 < width <= 1:
        raise ShapeError("width must be in (0, 1], got %r" % (width,))
    c32 = _scaled(32, width, 1)
    c64 = _scaled(64, width, 1)
    c256 = _scaled(256, width, 1)
    hidden = _scaled(4096, width, num_classes)
    layers = [
        LayerSpec("conv", kernel=(3, 3), out_channels=c32),
        LayerSpec("relu"),
        LayerSpec("conv", kernel=(3, 3), out_channels=c32),
        LayerSpec("relu"),
        LayerSpec("conv", kernel=(3, 3), out_channels=c32),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("conv", kernel=(3, 3), out_channels=c64),
        LayerSpec("relu"),
        LayerSpec("conv", kernel=(3, 3), out_channels=c256),
        LayerSpec("relu"),
        LayerSpec("conv", kernel=(5, 5), out_channels=c256),
        LayerSpec("relu"),
        LayerSpec("globalpool"),
        LayerSpec("dense", units=hidden),
        LayerSpec("relu"),
    ]
    if dropout_rate > 0:
        layers.append(LayerSpec("dropout", rate=dropout_rate))
    layers.append(LayerSpec("dense", units=num_classes))
    layers.append(LayerSpec(head))
    return ArchConfig(input_shape=(3, input_side, input_side), layers=tuple(layers),
                      num_classes=num_classes)


# The reference architecture's source listing, one (label, declared output
# size) row per layer at input 3 x 512 x 512.  Several rows contradict the
# valid-conv algebra; they are kept verbatim for the audit below.
DECLARED_REFERENCE_ROWS = (
    ("Convolution 3x3", (32, 510, 510)),
    ("ReLu Activation", (32, 510, 510)),
    ("Convolution 3x3", (32, 508, 508)),
    ("ReLu Activation", (32, 252, 252)),
    ("Convolution 3x3", (32, 506, 506)),
    ("ReLu Activation", (32, 506, 506)),
    ("Max Pooling", (32, 253, 253)),
    ("Convolution 3x3", (64, 251, 251)),
    ("ReLu Activation", (64, 251, 251)),
    ("Convolution 3x3", (256, 57, 57)),
    ("ReLu Activation", (256, 57, 57)),
    ("Convolution 5x5", (256, 53, 53)),
    ("ReLu Activation", (256, 53, 53)),
    ("Global Pooling", (256,)),
    ("Dense", (4096,)),
    ("ReLu Activation", (4096,)),
    ("Dense 2", (5,)),
    ("Sigmoid Activation", (5,)),
)


def declared_shape_warnings(num_classes=7):
    """Audit the declared reference rows against true layer algebra.

    Returns one warning string per declared row that the stated layer
    sequence cannot produce, including the declared two-unit dense /
    sigmoid head that conflicts with the task's class count.  The
    canonical builder never reproduces these rows.
    """
    config = reference_cnn_config(512, num_classes=num_classes, dropout_rate=0.0)
    shapes = infer_shapes(config)
    warnings = []
    for row, (spec, inferred) in enumerate(zip(config.layers, shapes), start=1):
        label, declared = DECLARED_REFERENCE_ROWS[row - 1]
        if spec.kind in ("dense", "softmax", "sigmoid") and row >= len(
            DECLARED_REFERENCE_ROWS
        ) - 1:
            warnings.append(
                "row %d (%s): declared head %s with output %s conflicts with the "
                "%d-class task; using dense(%d) + softmax"
                % (row, spec.kind, label, _format_shape(declared), num_classes, num_classes)
            )
            continue
        if tuple(declared) != tuple(inferred):
            warnings.append(
                "row %d (%s): declared output %s but the stated layers give %s"
                % (row, spec.kind, _format_shape(declared), _format_shape(inferred))
            )
    return warnings


def vgg16_config(num_classes=7, input_side=224, dropout_rate=0.5):
    """A sequential VGG16-shaped configuration for structural tests.

    Thirteen 3x3 convolutions in five blocks with 2x2 pooling, then the
    three-layer dense head, adapted to valid (no padding) convolutions;
    spatial sizes therefore shrink slightly faster than the padded
    original, and the 224 input reaches the head at 1x1 via global
    pooling.
    """
    cfg = []
    for channels, convs in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]:
        for _ in range(convs):
            cfg.append(LayerSpec("conv", kernel=(3, 3), out_channels=channels))
            cfg.append(LayerSpec("relu"))
        cfg.append(LayerSpec("maxpool"))
    cfg.append(LayerSpec("globalpool"))
    cfg.append(LayerSpec("dense", units=4096))
    cfg.append(LayerSpec("relu"))
    if dropout_rate > 0:
        cfg.append(LayerSpec("dropout", rate=dropout_rate))
    cfg.append(LayerSpec("dense", units=4096))
    cfg.append(LayerSpec("relu"))
    cfg.append(LayerSpec("dense", units=num_classes))
    cfg.append(LayerSpec("softmax"))
    return ArchConfig(input_shape=(3, input_side, input_side), layers=tuple(cfg),
                      num_classes=num_classes)
