"""Réseaux de débruitage (générateur 3D -> 2D) et discriminateur, en numpy pur

Activations rangées canal en dernier: (H, W, [D,] C). Les poids suivent la
convention (sorties, entrées, noyau...). Les convolutions sont des
corrélations calculées tap par tap (un produit matriciel par position du noyau).
"""

import itertools
import logging
from dataclasses import dataclass, field, fields
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
from scipy.special import expit

from ..errors import CheckpointError, DimensionError, TrainingError

logger = logging.getLogger("sparse-ct.nn")

DEPTH = 8
CHANNELS = 8
FOLDED = CHANNELS * (DEPTH - 4)
POOL = 12
FEATURES = CHANNELS * POOL * POOL
NN_VERSION = 1

P = TypeVar("P", bound="ParamSet")


class ParamSet:
    """Ensemble ordonné de tenseurs aux formes figées"""

    SHAPES: ClassVar[Dict[str, Tuple[int, ...]]] = {}

    def __post_init__(self):
        for f in fields(self):
            value = np.asarray(getattr(self, f.name))
            if value.shape != self.SHAPES[f.name]:
                raise DimensionError(f"{f.name}: forme {value.shape}, attendu {self.SHAPES[f.name]}")
            setattr(self, f.name, value)

    @classmethod
    def names(cls) -> List[str]:
        return list(cls.SHAPES)

    @classmethod
    def zeros(cls: Type[P], dtype=np.float32) -> P:
        return cls(**{name: np.zeros(shape, dtype=dtype) for name, shape in cls.SHAPES.items()})

    @classmethod
    def from_tensors(cls: Type[P], tensors: Sequence[np.ndarray]) -> P:
        return cls(**dict(zip(cls.names(), tensors)))

    def tensors(self) -> List[np.ndarray]:
        return [getattr(self, name) for name in self.names()]

    def astype(self: P, dtype) -> P:
        return self.from_tensors([t.astype(dtype) for t in self.tensors()])

    def copy(self: P) -> P:
        return self.from_tensors([t.copy() for t in self.tensors()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())


@dataclass
class GeneratorParams(ParamSet):
    SHAPES: ClassVar[Dict[str, Tuple[int, ...]]] = {
        "conv3d_1_w": (CHANNELS, 1, 3, 3, 3), "conv3d_1_b": (CHANNELS,),
        "conv3d_2_w": (CHANNELS, CHANNELS, 3, 3, 3), "conv3d_2_b": (CHANNELS,),
        "conv2d_1_w": (16, FOLDED, 3, 3), "conv2d_1_b": (16,),
        "conv2d_2_w": (1, 16, 3, 3), "conv2d_2_b": (1,),
    }

    conv3d_1_w: np.ndarray
    conv3d_1_b: np.ndarray
    conv3d_2_w: np.ndarray
    conv3d_2_b: np.ndarray
    conv2d_1_w: np.ndarray
    conv2d_1_b: np.ndarray
    conv2d_2_w: np.ndarray
    conv2d_2_b: np.ndarray


@dataclass
class DiscriminatorParams(ParamSet):
    SHAPES: ClassVar[Dict[str, Tuple[int, ...]]] = {
        "conv_1_w": (CHANNELS, 1, 3, 3), "conv_1_b": (CHANNELS,),
        "conv_2_w": (CHANNELS, CHANNELS, 3, 3), "conv_2_b": (CHANNELS,),
        "fc_1_w": (8, FEATURES), "fc_1_b": (8,),
        "fc_2_w": (8, 8), "fc_2_b": (8,),
        "fc_3_w": (1, 8), "fc_3_b": (1,),
    }

    conv_1_w: np.ndarray
    conv_1_b: np.ndarray
    conv_2_w: np.ndarray
    conv_2_b: np.ndarray
    fc_1_w: np.ndarray
    fc_1_b: np.ndarray
    fc_2_w: np.ndarray
    fc_2_b: np.ndarray
    fc_3_w: np.ndarray
    fc_3_b: np.ndarray


@dataclass
class Tape:
    """Activations mémorisées par une passe avant, consommées par la passe arrière"""

    values: Dict[str, np.ndarray] = field(default_factory=dict)

    def get(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise TrainingError(f"activation '{name}' absente: passe avant requise avant la passe arrière")
        return self.values[name]


# --- Layers ----------------------------------------------------------------

def _pad_spec(pad: Sequence[int]):
    return [(p, p) for p in pad] + [(0, 0)]


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: Sequence[int]) -> np.ndarray:
    """Corrélation canal en dernier; `pad` = zéros ajoutés de chaque côté, par axe spatial"""
    kernel = w.shape[2:]
    xp = np.pad(x, _pad_spec(pad))
    out_shape = tuple(xp.shape[i] - kernel[i] + 1 for i in range(len(kernel)))
    if min(out_shape) < 1:
        raise DimensionError(f"entrée {x.shape[:-1]} trop petite pour un noyau {kernel}")
    out = np.zeros(out_shape + (w.shape[0],), dtype=np.result_type(x, w))
    out += b
    for tap in itertools.product(*(range(k) for k in kernel)):
        window = tuple(slice(t, t + n) for t, n in zip(tap, out_shape))
        out += xp[window] @ w[(slice(None), slice(None)) + tap].T
    return out


def conv_backward(x: np.ndarray, w: np.ndarray, pad: Sequence[int],
                  grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (poids, biais, entrée) d'une conv_forward"""
    kernel = w.shape[2:]
    xp = np.pad(x, _pad_spec(pad))
    out_shape = grad_out.shape[:-1]
    dtype = np.result_type(x, w, grad_out)
    dxp = np.zeros(xp.shape, dtype=dtype)
    dw = np.zeros(w.shape, dtype=dtype)
    flat_grad = grad_out.reshape(-1, w.shape[0])
    for tap in itertools.product(*(range(k) for k in kernel)):
        window = tuple(slice(t, t + n) for t, n in zip(tap, out_shape))
        index = (slice(None), slice(None)) + tap
        dw[index] = flat_grad.T @ xp[window].reshape(-1, w.shape[1])
        dxp[window] += grad_out @ w[index]
    inner = tuple(slice(p, n - p) for p, n in zip(pad, xp.shape)) + (slice(None),)
    return dw, flat_grad.sum(axis=0), dxp[inner]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def pooling_matrix(n: int, out: int = POOL) -> np.ndarray:
    """Moyenne adaptative: la case i couvre [⌊i·n/out⌋, ⌈(i+1)·n/out⌉)"""
    matrix = np.zeros((out, n))
    for i in range(out):
        start = (i * n) // out
        stop = -(-((i + 1) * n) // out)
        matrix[i, start:stop] = 1.0 / (stop - start)
    return matrix


# --- Generator -------------------------------------------------------------

def _check_subvolume(sub: np.ndarray) -> None:
    if sub.ndim != 3 or sub.shape[2] != DEPTH:
        raise DimensionError(f"sous-volume [H, W, {DEPTH}] attendu, reçu {sub.shape}")
    if min(sub.shape[:2]) < 3:
        raise DimensionError(f"sous-volume trop petit dans le plan: {sub.shape[:2]}")


def generator_forward(p: GeneratorParams, sub: np.ndarray, tape: Optional[Tape] = None) -> np.ndarray:
    """Sous-volume [H, W, 8] -> coupe centrale débruitée [H, W]"""
    sub = np.asarray(sub)
    _check_subvolume(sub)
    h, w = sub.shape[:2]
    a0 = sub[..., None]
    z1 = conv_forward(a0, p.conv3d_1_w, p.conv3d_1_b, (1, 1, 0))
    a1 = relu(z1)
    z2 = conv_forward(a1, p.conv3d_2_w, p.conv3d_2_b, (1, 1, 0))
    a2 = relu(z2)
    # (H, W, D, C) -> (H, W, C*D), channel index c * D + z
    folded = a2.transpose(0, 1, 3, 2).reshape(h, w, -1)
    z3 = conv_forward(folded, p.conv2d_1_w, p.conv2d_1_b, (1, 1))
    a3 = relu(z3)
    z4 = conv_forward(a3, p.conv2d_2_w, p.conv2d_2_b, (1, 1))
    if tape is not None:
        tape.values.update(a0=a0, z1=z1, a1=a1, z2=z2, folded=folded, z3=z3, a3=a3)
    return z4[..., 0]


def generator_backward(p: GeneratorParams, tape: Tape, upstream: np.ndarray) -> GeneratorParams:
    """Gradient de ⟨upstream, G(sub)⟩ par rapport à chaque paramètre"""
    a3 = tape.get("a3")
    upstream = np.asarray(upstream)
    if upstream.shape != a3.shape[:2]:
        raise DimensionError(f"gradient amont de forme {upstream.shape}, attendu {a3.shape[:2]}")
    h, w = upstream.shape

    dw4, db4, da3 = conv_backward(a3, p.conv2d_2_w, (1, 1), upstream[..., None])
    dz3 = da3 * (tape.get("z3") > 0)
    dw3, db3, dfolded = conv_backward(tape.get("folded"), p.conv2d_1_w, (1, 1), dz3)
    da2 = dfolded.reshape(h, w, CHANNELS, -1).transpose(0, 1, 3, 2)
    dz2 = da2 * (tape.get("z2") > 0)
    dw2, db2, da1 = conv_backward(tape.get("a1"), p.conv3d_2_w, (1, 1, 0), dz2)
    dz1 = da1 * (tape.get("z1") > 0)
    dw1, db1, _ = conv_backward(tape.get("a0"), p.conv3d_1_w, (1, 1, 0), dz1)
    return GeneratorParams(dw1, db1, dw2, db2, dw3, db3, dw4, db4)


# --- Discriminator ---------------------------------------------------------

def discriminator_forward(p: DiscriminatorParams, image: np.ndarray, tape: Optional[Tape] = None) -> float:
    """Coupe [H, W] -> probabilité d'être une vraie coupe, dans (0, 1)"""
    image = np.asarray(image)
    if image.ndim != 2 or min(image.shape) < 3:
        raise DimensionError(f"coupe 2D d'au moins 3x3 attendue, reçu {image.shape}")
    a0 = image[..., None]
    z1 = conv_forward(a0, p.conv_1_w, p.conv_1_b, (1, 1))
    a1 = relu(z1)
    z2 = conv_forward(a1, p.conv_2_w, p.conv_2_b, (1, 1))
    a2 = relu(z2)
    ph = pooling_matrix(image.shape[0]).astype(a2.dtype)
    pw = pooling_matrix(image.shape[1]).astype(a2.dtype)
    pooled = np.einsum("ih,jw,hwc->ijc", ph, pw, a2)
    features = pooled.transpose(2, 0, 1).reshape(-1)
    h1 = p.fc_1_w @ features + p.fc_1_b
    r1 = relu(h1)
    h2 = p.fc_2_w @ r1 + p.fc_2_b
    r2 = relu(h2)
    logit = p.fc_3_w @ r2 + p.fc_3_b
    prob = float(expit(logit[0]))
    if tape is not None:
        tape.values.update(a0=a0, z1=z1, a1=a1, z2=z2, ph=ph, pw=pw, features=features,
                           h1=h1, r1=r1, h2=h2, r2=r2, prob=np.asarray(prob))
    return prob


def discriminator_backward(p: DiscriminatorParams, tape: Tape,
                           upstream: float) -> Tuple[DiscriminatorParams, np.ndarray]:
    """Gradients de upstream · D(coupe): paramètres et coupe d'entrée"""
    prob = float(tape.get("prob"))
    features, r1, r2 = tape.get("features"), tape.get("r1"), tape.get("r2")
    dlogit = np.array([upstream * prob * (1.0 - prob)], dtype=np.result_type(features, p.fc_3_w))

    d_fc3_w = np.outer(dlogit, r2)
    dh2 = (p.fc_3_w.T @ dlogit) * (tape.get("h2") > 0)
    d_fc2_w = np.outer(dh2, r1)
    dh1 = (p.fc_2_w.T @ dh2) * (tape.get("h1") > 0)
    d_fc1_w = np.outer(dh1, features)
    dfeatures = p.fc_1_w.T @ dh1

    dpooled = dfeatures.reshape(CHANNELS, POOL, POOL).transpose(1, 2, 0)
    da2 = np.einsum("ih,jw,ijc->hwc", tape.get("ph"), tape.get("pw"), dpooled)
    dz2 = da2 * (tape.get("z2") > 0)
    dw2, db2, da1 = conv_backward(tape.get("a1"), p.conv_2_w, (1, 1), dz2)
    dz1 = da1 * (tape.get("z1") > 0)
    dw1, db1, da0 = conv_backward(tape.get("a0"), p.conv_1_w, (1, 1), dz1)

    grads = DiscriminatorParams(dw1, db1, dw2, db2, d_fc1_w, dh1, d_fc2_w, dh2, d_fc3_w, dlogit)
    return grads, da0[..., 0]


# --- Initialization and serialization --------------------------------------

def _he_normal(rng: np.random.Generator, params_cls: Type[P]) -> P:
    tensors = []
    for name, shape in params_cls.SHAPES.items():
        if name.endswith("_b"):
            tensors.append(np.zeros(shape, dtype=np.float32))
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors.append((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32))
    return params_cls.from_tensors(tensors)


def init_params(seed: int) -> Tuple[GeneratorParams, DiscriminatorParams]:
    """Initialisation de He (loi normale, variance 2/fan_in), biais nuls"""
    gen_seq, disc_seq = np.random.SeedSequence(seed).spawn(2)
    gen = _he_normal(np.random.default_rng(gen_seq), GeneratorParams)
    disc = _he_normal(np.random.default_rng(disc_seq), DiscriminatorParams)
    return gen, disc


def param_header(params: ParamSet, prefix: str) -> Dict[str, str]:
    header = {f"{prefix}.{name}": "x".join(str(n) for n in shape) for name, shape in params.SHAPES.items()}
    header[f"{prefix}.nn_version"] = str(NN_VERSION)
    return header


def pack_params(*sets: ParamSet) -> bytes:
    """Tenseurs float32 little-endian, dans l'ordre de déclaration des champs"""
    return b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for params in sets for t in params.tensors())


def unpack_params(params_cls: Type[P], header: Dict[str, str], prefix: str,
                  payload: bytes, offset: int = 0) -> Tuple[P, int]:
    if header.get(f"{prefix}.nn_version") != str(NN_VERSION):
        raise CheckpointError(f"{prefix}: version de paramètres inconnue {header.get(f'{prefix}.nn_version')}")
    tensors = []
    for name, shape in params_cls.SHAPES.items():
        key = f"{prefix}.{name}"
        recorded = header.get(key)
        expected = "x".join(str(n) for n in shape)
        if recorded != expected:
            raise CheckpointError(f"{key}: forme {recorded}, attendu {expected}")
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{key}: données tronquées")
        tensors.append(np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32))
        offset = end
    params = params_cls.from_tensors(tensors)
    if not params.is_finite():
        raise CheckpointError(f"{prefix}: paramètres non finis")
    return params, offset
