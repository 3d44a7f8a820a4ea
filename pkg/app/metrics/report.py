from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

from app.audio.dsp import MelSpec
from app.errors import MetricError
from app.metrics.divergence import KLD_SMOOTHING, inception_score, mean_pairwise_kld
from app.metrics.embedder import Embedder, extract_features
from app.metrics.frechet import frechet_distance, moments


@dataclass
class EvalReport:
    fd: float
    fad: float
    kld: float
    isc: float
    n: int
    embedder_ids: Dict[str, str]
    config_hash: str = ""
    method: str = "subtractive"
    extra: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        extra = out.pop("extra")
        out.update(extra)
        return out


def _fd(emb: Embedder, generated: Sequence[MelSpec], targets: Sequence[MelSpec]) -> float:
    return frechet_distance(moments(extract_features(emb, targets)),
                            moments(extract_features(emb, generated)))


def evaluate_pairs(generated: Sequence[MelSpec], targets: Sequence[MelSpec], fd_embedder: Embedder,
                   fad_embedder: Embedder, config_hash: str = "", method: str = "subtractive",
                   extra: Optional[Dict[str, float]] = None, kld_smoothing: float = KLD_SMOOTHING) -> EvalReport:
    """
    FD and FAD fit Gaussians to the two embedders' features of the target
    and generated sets; KLD averages over aligned pairs; IS is computed on
    the generated set with the FD embedder.
    """
    if len(generated) != len(targets):
        raise MetricError(f"{len(generated)} generated clips but {len(targets)} targets")
    if len(generated) < 2:
        raise MetricError(f"evaluation needs at least 2 pairs, got {len(generated)}")
    report = EvalReport(
        fd=_fd(fd_embedder, generated, targets),
        fad=_fd(fad_embedder, generated, targets),
        kld=mean_pairwise_kld(generated, targets, fd_embedder, kld_smoothing),
        isc=inception_score(generated, fd_embedder),
        n=len(generated),
        embedder_ids={"fd": fd_embedder.identifier, "fad": fad_embedder.identifier},
        config_hash=config_hash,
        method=method,
        extra=dict(extra or {}),
    )
    print(f"[Eval] {method}: FD {report.fd:.3f}  FAD {report.fad:.3f}  "
          f"KLD {report.kld:.3f}  ISc {report.isc:.3f}  (n={report.n})")
    return report
