"""Dataset ingestion, ground-truth alignment, increment tables, augmentation.

Supported on-disk layouts:
  synth   canonical CSV written by this package:
            IMU:          t_ns,gx,gy,gz,ax,ay,az         (SI units)
            ground truth: t_ns,px,py,pz,qw,qx,qy,qz
  euroc   native EuRoC MAV csv (timestamp [ns], w_RS_S_*, a_RS_S_*);
          ground truth rows are t, p(3), q(w,x,y,z), extra columns ignored
  tumvi   same column layout as euroc (TUM-VI ships EuRoC-style csv)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

# training-time augmentation noise, 0.01 deg/s expressed in rad/s
DEFAULT_AUGMENT_STD = 0.01 * np.pi / 180.0


class ValidationError(ValueError):
    """Input data fails a structural or numerical sanity check."""


@dataclass
class ImuSequence:
    t: np.ndarray            # ns, strictly increasing
    gyro: np.ndarray         # (M, 3) rad/s
    acc: np.ndarray          # (M, 3) m/s^2
    nominal_rate: float = 200.0
    name: str = ""

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.gyro = np.asarray(self.gyro, dtype=float)
        self.acc = np.asarray(self.acc, dtype=float)
        if len(self.t) != len(self.gyro) or len(self.t) != len(self.acc):
            raise ValidationError("timestamp/channel length mismatch")
        dts = np.diff(self.t)
        if len(dts) and np.any(dts <= 0):
            i = int(np.nonzero(dts <= 0)[0][0])
            raise ValidationError(f"non-monotonic timestamps at row {i + 1}")
        if len(dts):
            med = float(np.median(dts)) * 1e-9
            if abs(med - 1.0 / self.nominal_rate) > 0.05 / self.nominal_rate:
                raise ValidationError(
                    f"median sample period {med:.6f}s is more than 5% off "
                    f"the nominal rate {self.nominal_rate} Hz"
                )

    @property
    def dt(self):
        return 1.0 / self.nominal_rate

    def __len__(self):
        return len(self.t)

    def window(self, start, stop):
        return ImuSequence(self.t[start:stop], self.gyro[start:stop],
                           self.acc[start:stop], self.nominal_rate, self.name)


@dataclass
class GroundTruth:
    t: np.ndarray            # ns
    rot: np.ndarray          # (K, 3, 3)
    pos: np.ndarray          # (K, 3) m
    gap_mask: np.ndarray = None  # (K,) bool, True where ground truth absent

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.rot = np.asarray(self.rot, dtype=float)
        self.pos = np.asarray(self.pos, dtype=float)
        if self.gap_mask is None:
            self.gap_mask = np.zeros(len(self.t), dtype=bool)
        self.gap_mask = np.asarray(self.gap_mask, dtype=bool)

    def __len__(self):
        return len(self.t)


@dataclass
class SplitSpec:
    """Per-sequence role assignment with optional time windows (seconds)."""

    roles: dict = field(default_factory=dict)      # name -> role string
    windows: dict = field(default_factory=dict)    # name -> (start_s, end_s)

    def sequences(self, role):
        """Names assigned to a role; `train+val` sequences count for both."""
        return sorted(n for n, r in self.roles.items() if role in r.split("+"))

    @classmethod
    def from_config(cls, cfg: dict):
        spec = cls()
        for key, val in cfg.items():
            if key.startswith("split."):
                name = key[len("split."):]
                role = val.strip()
                if role not in ("train", "val", "test", "train+val"):
                    raise ValidationError(f"unknown split role {role!r}")
                spec.roles[name] = role
            elif key.startswith("window."):
                name = key[len("window."):]
                lo, hi = (float(x) for x in val.split(","))
                spec.windows[name] = (lo, hi)
        return spec


@dataclass
class IncrementTable:
    """Ground-truth increments delta R_{i,i+j} at stride j, per j."""

    entries: dict = field(default_factory=dict)  # j -> (starts, rots (K,3,3))

    def for_j(self, j):
        if j not in self.entries:
            raise KeyError(f"no increments for j={j}")
        return self.entries[j]


# -- parsing -------------------------------------------------------------------

def _read_csv_rows(path, n_cols_min):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if not _is_number(parts[0]):
                if rows:
                    raise ValidationError(
                        f"{path}: line {lineno}: malformed numeric field"
                    )
                continue  # header line
            if len(parts) < n_cols_min:
                raise ValidationError(
                    f"{path}: line {lineno}: expected at least {n_cols_min} "
                    f"columns, got {len(parts)}"
                )
            try:
                row = [float(x) for x in parts[:n_cols_min]]
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: malformed numeric field"
                ) from None
            if not all(np.isfinite(row)):
                raise ValidationError(
                    f"{path}: line {lineno}: non-finite value"
                )
            rows.append(row)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return np.array(rows)


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_sequence(imu_path, gt_path, fmt="synth", nominal_rate=200.0, name=""):
    """Load one recording. Returns (ImuSequence, GroundTruth)."""
    if fmt not in ("synth", "euroc", "tumvi"):
        raise ValidationError(f"unknown format {fmt!r}")
    imu_rows = _read_csv_rows(imu_path, 7)
    imu = ImuSequence(
        t=imu_rows[:, 0].astype(np.int64),
        gyro=imu_rows[:, 1:4],
        acc=imu_rows[:, 4:7],
        nominal_rate=nominal_rate,
        name=name,
    )
    gt_rows = _read_csv_rows(gt_path, 8)
    gt = GroundTruth(
        t=gt_rows[:, 0].astype(np.int64),
        rot=so3.quat_to_rot(gt_rows[:, 4:8]),
        pos=gt_rows[:, 1:4],
    )
    return imu, gt


def write_imu_csv(path, t_ns, gyro, acc):
    with open(path, "w") as f:
        f.write("t_ns,gx,gy,gz,ax,ay,az\n")
        for ti, g, a in zip(t_ns, gyro, acc):
            f.write(f"{int(ti)},{g[0]:.17g},{g[1]:.17g},{g[2]:.17g},"
                    f"{a[0]:.17g},{a[1]:.17g},{a[2]:.17g}\n")


def write_gt_csv(path, t_ns, rots, pos):
    with open(path, "w") as f:
        f.write("t_ns,px,py,pz,qw,qx,qy,qz\n")
        for ti, r, p in zip(t_ns, rots, pos):
            q = so3.rot_to_quat(r)
            f.write(f"{int(ti)},{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},"
                    f"{q[0]:.17g},{q[1]:.17g},{q[2]:.17g},{q[3]:.17g}\n")


# -- alignment -----------------------------------------------------------------

def align_ground_truth(imu: ImuSequence, gt: GroundTruth, offset_s=0.0,
                       gap_factor=2.5):
    """Resample ground truth onto IMU timestamps.

    Rotations are interpolated along the geodesic
    R(tau) = R_a exp(tau log(R_a^T R_b)), positions linearly. IMU samples
    bracketed by a ground-truth spacing larger than gap_factor times the
    median spacing, or falling outside the ground-truth range, are flagged
    in gap_mask. A constant time offset (seconds) is applied to the
    ground-truth clock before resampling.
    """
    gt_t = gt.t + np.int64(round(offset_s * 1e9))
    if gt_t[-1] < imu.t[0] or gt_t[0] > imu.t[-1]:
        raise ValidationError("no time overlap between IMU and ground truth")

    if np.array_equal(gt_t, imu.t):
        return GroundTruth(imu.t, gt.rot.copy(), gt.pos.copy(),
                           gt.gap_mask.copy())

    med_dt = float(np.median(np.diff(gt_t)))
    idx = np.searchsorted(gt_t, imu.t, side="right") - 1
    outside = (idx < 0) | (idx >= len(gt_t) - 1)
    idx = np.clip(idx, 0, len(gt_t) - 2)
    ta = gt_t[idx].astype(float)
    tb = gt_t[idx + 1].astype(float)
    tau = np.clip((imu.t - ta) / (tb - ta), 0.0, 1.0)

    ra = gt.rot[idx]
    rb = gt.rot[idx + 1]
    dv = so3.log_so3(np.swapaxes(ra, -1, -2) @ rb)
    rot = ra @ so3.exp_so3(tau[:, None] * dv)
    pos = gt.pos[idx] * (1 - tau[:, None]) + gt.pos[idx + 1] * tau[:, None]

    gaps = outside | ((tb - ta) > gap_factor * med_dt)
    gaps |= gt.gap_mask[idx] | gt.gap_mask[np.clip(idx + 1, 0, len(gt_t) - 1)]
    # exact hits on the last ground-truth sample are not outside
    exact_last = imu.t == gt_t[-1]
    gaps &= ~exact_last
    return GroundTruth(imu.t, rot, pos, gaps)


def build_increment_table(gt: GroundTruth, js):
    """delta R_{i,i+j} at i = 0, j, 2j, ... per j; windows touching a gap
    are omitted."""
    table = IncrementTable()
    cumgap = np.concatenate([[0], np.cumsum(gt.gap_mask.astype(int))])
    for j in sorted(js):
        starts = np.arange(0, len(gt.rot) - j, j)
        # window [i, i+j] intersects a gap iff any flagged sample inside
        n_gaps = cumgap[starts + j + 1] - cumgap[starts]
        keep = n_gaps == 0
        starts = starts[keep]
        ri = gt.rot[starts]
        rj = gt.rot[starts + j]
        table.entries[j] = (starts, np.swapaxes(ri, -1, -2) @ rj)
    return table


# -- augmentation ----------------------------------------------------------------

def augment(imu: ImuSequence, noise_std=DEFAULT_AUGMENT_STD, seed=None,
            rng=None):
    """Fresh i.i.d. Gaussian noise on all 6 channels (per epoch)."""
    noise_std = np.broadcast_to(np.asarray(noise_std, dtype=float), (6,))
    if np.any(noise_std < 0):
        raise ValueError("noise_std must be non-negative")
    if not np.any(noise_std > 0):
        return imu
    if rng is None:
        rng = np.random.default_rng(seed)
    noise = rng.normal(size=(len(imu), 6)) * noise_std
    return ImuSequence(imu.t, imu.gyro + noise[:, :3], imu.acc + noise[:, 3:],
                       imu.nominal_rate, imu.name)


# -- config files ----------------------------------------------------------------

def parse_config(path):
    """Flat `key = value` file; '#' starts a comment; later keys win."""
    cfg = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}: line {lineno}: expected key = value")
            key, val = line.split("=", 1)
            cfg[key.strip()] = val.strip()
    return cfg
