"""Region-specialised DrosoNet ensembles: build, train, infer, persist."""

from __future__ import annotations

import logging
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .drosonet import ROW_GROUP, DrosoNet, DrosoNetConfig, softmax
from .errors import FormatError, InvalidInputError, StateError
from .imaging import INPUT_SIZE, to_grayscale
from .partition import PAPER_GRIDS, PartitionPlan, region_pixels
from .voting import Retrieval, vote

log = logging.getLogger(__name__)

MAGIC = b"RDN1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnsembleConfig:
    grids: PartitionPlan = PAPER_GRIDS
    z_per_region: int = 2
    k_votes: int = 20
    drosonet: DrosoNetConfig = field(default_factory=DrosoNetConfig)
    master_seed: int = 0

    def __post_init__(self):
        if self.z_per_region < 1:
            raise InvalidInputError(f"z_per_region must be >= 1, got {self.z_per_region}")
        if self.k_votes < 1:
            raise InvalidInputError(f"k_votes must be >= 1, got {self.k_votes}")
        if not 0 <= self.master_seed < 2**64:
            raise InvalidInputError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        if self.drosonet.d_in != INPUT_SIZE:
            raise InvalidInputError(f"ensemble members take {INPUT_SIZE}-pixel regions, got d_in={self.drosonet.d_in}")
        # place count and seed are filled in per member at build time
        object.__setattr__(self, "drosonet", replace(self.drosonet, n_places=1, seed=0))

    @property
    def region_count(self) -> int:
        return self.grids.region_count

    @property
    def total_nets(self) -> int:
        return self.region_count * self.z_per_region


def member_seed(master_seed: int, group: int, member: int) -> int:
    """64-bit seed for one DrosoNet, derived only from its position and the master seed."""
    state = np.random.SeedSequence(entropy=master_seed, spawn_key=(group, member)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def make_training_subsets(reference_images: Sequence[np.ndarray], plan: PartitionPlan) -> np.ndarray:
    """Region pixels of every reference image as a (P, N, 2048) uint8 array.

    Entry ``[p, n]`` is region ``p`` of image ``n``; divide by 255 for the
    float input vectors.
    """
    if len(reference_images) < 1:
        raise InvalidInputError("need at least one reference image")
    first = region_pixels(to_grayscale(reference_images[0]), plan)
    subsets = np.empty((first.shape[0], len(reference_images), INPUT_SIZE), np.uint8)
    subsets[:, 0] = first
    for n, img in enumerate(reference_images[1:], start=1):
        subsets[:, n] = region_pixels(to_grayscale(img), plan)
    return subsets


class Ensemble:
    """P groups of Z DrosoNets; group p only ever sees region p."""

    def __init__(self, config: EnsembleConfig, n_places: int, groups: list[list[DrosoNet]]):
        if len(groups) != config.region_count or any(len(g) != config.z_per_region for g in groups):
            raise InvalidInputError("group layout does not match the configuration")
        self.config = config
        self.n_places = n_places
        self.groups = groups
        self._packed = None

    @classmethod
    def build(cls, config: EnsembleConfig, n_places: int) -> "Ensemble":
        groups = []
        for p in range(config.region_count):
            members = []
            for z in range(config.z_per_region):
                net_cfg = replace(config.drosonet, n_places=n_places, seed=member_seed(config.master_seed, p, z))
                members.append(DrosoNet.initialize(net_cfg))
            groups.append(members)
        seeds = {net.config.seed for g in groups for net in g}
        if len(seeds) != config.total_nets:
            raise StateError("derived member seeds collided")
        return cls(config, n_places, groups)

    @property
    def plan(self) -> PartitionPlan:
        return self.config.grids

    @property
    def total_nets(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def trained(self) -> bool:
        return all(net.trained for net in self.nets())

    def nets(self) -> Iterable[DrosoNet]:
        for group in self.groups:
            yield from group

    def train_all(
        self,
        reference_images: Sequence[np.ndarray] | None = None,
        subsets: np.ndarray | None = None,
        workers: int = 1,
        order: Sequence[tuple[int, int]] | None = None,
    ) -> "Ensemble":
        """Train every member of group p on subset p.

        Either ``reference_images`` or precomputed ``subsets`` (from
        :func:`make_training_subsets`) must be given. ``order`` only changes
        the schedule, never the result.
        """
        if subsets is None:
            if reference_images is None:
                raise InvalidInputError("train_all needs reference images or training subsets")
            if len(reference_images) != self.n_places:
                raise InvalidInputError(
                    f"expected {self.n_places} reference images, got {len(reference_images)}"
                )
            subsets = make_training_subsets(reference_images, self.plan)
        if subsets.shape[:2] != (self.config.region_count, self.n_places):
            raise InvalidInputError(f"training subsets have shape {subsets.shape}, "
                                    f"expected ({self.config.region_count}, {self.n_places}, ...)")
        if order is None:
            order = [(p, z) for p in range(len(self.groups)) for z in range(len(self.groups[p]))]

        def job(pz):
            p, z = pz
            net = self.groups[p][z]
            net.loss_history = net.fit_hidden(net.hidden_batch_from_pixels(subsets[p]))
            net.trained = True
            log.debug("group %d member %d: loss %.4f -> %.4f", p, z, net.loss_history[0], net.loss_history[-1])

        self._packed = None
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(job, order))
        else:
            for pz in order:
                job(pz)
        return self

    def _require_trained(self):
        if not self.trained:
            raise StateError("ensemble has untrained members; call train_all first")

    def infer(self, query_image: np.ndarray) -> np.ndarray:
        """Score vectors of all T members as a (T, N) array, group-major order."""
        self._require_trained()
        regions = region_pixels(to_grayscale(query_image), self.plan)
        return self.infer_regions(regions)

    def _inference_arrays(self):
        """Stacked H bits, weight tables and biases of all members.

        Each member's weight table becomes a view into the stacked array so
        the (large) tables exist once.
        """
        if self._packed is None:
            nets = list(self.nets())
            h_all = np.stack([net.h_bits for net in nets])
            biases = np.stack([net.bias for net in nets])
            first = _kernels.build_row_table(nets[0].weights, ROW_GROUP)
            tables = np.empty((len(nets),) + first.shape, np.float32)
            tables[0] = first
            del first
            for t, net in enumerate(nets):
                if t:
                    tables[t] = net.row_table if net._table is not None else \
                        _kernels.build_row_table(net.weights, ROW_GROUP)
                net._table = tables[t]
            self._packed = (h_all, tables, biases)
        return self._packed

    def infer_regions(self, regions: np.ndarray) -> np.ndarray:
        """Score vectors from precomputed (P, 2048) region pixels."""
        h_all, tables, biases = self._inference_arrays()
        logits = np.empty((self.total_nets, self.n_places), np.float32)
        _kernels.ensemble_logits(np.ascontiguousarray(regions), self.config.z_per_region,
                                 h_all, tables, ROW_GROUP, biases, logits)
        return softmax(logits)

    def match(self, query_image: np.ndarray, k: int | None = None) -> Retrieval:
        """Raw image in, retrieved place and confidence out."""
        return vote(self.infer(query_image), self.config.k_votes if k is None else k)

    def group_slice(self, p: int) -> slice:
        z = self.config.z_per_region
        return slice(p * z, (p + 1) * z)

    def equals(self, other: "Ensemble") -> bool:
        """Bit-level equality of configuration and all parameters."""
        if self.config != other.config or self.n_places != other.n_places:
            return False
        for a, b in zip(self.nets(), other.nets()):
            if a.config != b.config or a.trained != b.trained:
                return False
            for x, y in ((a.h_bits, b.h_bits), (a.weights, b.weights), (a.bias, b.bias)):
                if x.dtype != y.dtype or x.shape != y.shape or x.tobytes() != y.tobytes():
                    return False
        return True


_HEADER = struct.Struct("<IIIIIIdQI?")


def save(ensemble: Ensemble, path: str | Path) -> None:
    """Write the model file: magic, version, header, per-member payload, CRC32 trailer."""
    ensemble._require_trained()
    cfg = ensemble.config
    net_cfg = cfg.drosonet
    crc = 0
    with open(path, "wb") as fh:
        def put(chunk: bytes):
            nonlocal crc
            crc = zlib.crc32(chunk, crc)
            fh.write(chunk)

        put(MAGIC + struct.pack("<H", FORMAT_VERSION))
        put(_HEADER.pack(ensemble.n_places, net_cfg.d_in, net_cfg.d_hidden, cfg.k_votes, cfg.z_per_region,
                         net_cfg.epochs, net_cfg.learning_rate, cfg.master_seed, len(cfg.grids.grids),
                         ensemble.trained))
        for g in cfg.grids.grids:
            put(struct.pack("<II", g.rows, g.cols))
        for net in ensemble.nets():
            put(struct.pack("<Q", net.config.seed))
            put(net.h_bits.astype("<u8", copy=False).tobytes())
            put(net.weights.astype("<f4", copy=False).tobytes())
            put(net.bias.astype("<f4", copy=False).tobytes())
        fh.write(struct.pack("<I", crc))


def load(path: str | Path) -> Ensemble:
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    if len(data) < 10 + _HEADER.size + 4:
        raise FormatError(f"{path}: truncated model file")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch (corrupt or truncated file)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    pos = 6
    n_places, d_in, d_hidden, k, z, epochs, lr, master_seed, n_grids, trained = _HEADER.unpack_from(data, pos)
    pos += _HEADER.size
    body = data[:-4]
    try:
        pairs = []
        for _ in range(n_grids):
            pairs.append(struct.unpack_from("<II", body, pos))
            pos += 8
        net_template = DrosoNetConfig(d_in=d_in, d_hidden=d_hidden, n_places=n_places, epochs=epochs,
                                      learning_rate=lr)
        config = EnsembleConfig(grids=PartitionPlan.from_pairs(pairs), z_per_region=z, k_votes=k,
                                drosonet=net_template, master_seed=master_seed)
        n_words = net_template.n_words

        def take(dtype, count, shape):
            nonlocal pos
            nbytes = np.dtype(dtype).itemsize * count
            if pos + nbytes > len(body):
                raise FormatError(f"{path}: truncated member payload")
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=pos).reshape(shape)
            pos += nbytes
            return arr.astype(arr.dtype.newbyteorder("="))

        groups = []
        for _p in range(config.region_count):
            members = []
            for _z in range(z):
                (seed,) = take("<u8", 1, (1,))
                net = DrosoNet(
                    replace(net_template, seed=int(seed)),
                    take("<u8", d_hidden * n_words, (d_hidden, n_words)),
                    take("<f4", d_hidden * n_places, (d_hidden, n_places)),
                    take("<f4", n_places, (n_places,)),
                    trained=bool(trained),
                )
                members.append(net)
            groups.append(members)
    except (struct.error, InvalidInputError) as exc:
        raise FormatError(f"{path}: malformed model file ({exc})") from exc
    if pos != len(body):
        raise FormatError(f"{path}: {len(body) - pos} unexpected trailing bytes")
    return Ensemble(config, n_places, groups)
