"""
The spectral radiance and density field family.

Radiance variants
    ``C``   latent Theta_C(x, d) decoded at the encoded wavelength
    ``C1``  one head channel per captured wavelength (cannot interpolate)
    ``C2``  wavelength appended to the position before a 4D grid encoding

Density variants
    ``sigma``   latent Theta_sigma decoded at the encoded wavelength
    ``sigma0``  one scalar density shared by every wavelength
    ``sigma1``  one density channel per captured wavelength
    ``sigma2``  4D grid path, like ``C2``

Proposal variants
    ``P0``       wavelength-agnostic coarse density
    ``Plambda``  coarse latent decoded at the encoded wavelength
"""

from __future__ import annotations


__all__ = [
    "RadianceVariant",
    "DensityVariant",
    "ProposalVariant",
    "ABLATION_ROWS",
    "FieldConfig",
    "FieldSample",
    "ProposalNetwork",
    "Field",
    "build_field",
    "eval_radiance",
    "eval_density",
    "eval_proposal",
]

import dataclasses
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from typing_extensions import Literal

from hsnerf import autodiff as ad
from hsnerf.autodiff import Tensor
from hsnerf.encoding import GridEncoding, SinusoidalEncoding
from hsnerf.errors import ConfigError, UnsupportedWavelengthError
from hsnerf.nn import MLP
from hsnerf.numbers import IntArray, as_wavelengths
from hsnerf.sampling import SceneBox


RadianceVariant = Literal["C", "C1", "C2"]
DensityVariant = Literal["sigma", "sigma0", "sigma1", "sigma2"]
ProposalVariant = Literal["P0", "Plambda"]

RADIANCE_VARIANTS: Tuple[str, ...] = ("C", "C1", "C2")
DENSITY_VARIANTS: Tuple[str, ...] = ("sigma", "sigma0", "sigma1", "sigma2")
PROPOSAL_VARIANTS: Tuple[str, ...] = ("P0", "Plambda")

# architecture rows of the ablation table, in table order
ABLATION_ROWS: Tuple[Tuple[str, str, str], ...] = (
    ("C1", "sigma0", "P0"),
    ("C1", "sigma1", "P0"),
    ("C", "sigma0", "P0"),
    ("C", "sigma", "P0"),
    ("C2", "sigma2", "P0"),
    ("C", "sigma", "Plambda"),
)

# channel grids come from float32 cubes
CHANNEL_TOLERANCE_NM = 1e-3


@dataclass(frozen=True)
class FieldConfig:
    radiance_variant: RadianceVariant = "C"
    density_variant: DensityVariant = "sigma0"
    proposal_variant: ProposalVariant = "P0"
    n_channels: Optional[int] = None
    channel_wavelengths: Optional[Tuple[float, ...]] = None
    wavelength_range: Tuple[float, float] = (400.0, 1000.0)

    latent_dim: int = 15
    lambda_terms: int = 8
    decoder_hidden: int = 64
    decoder_layers: int = 3
    shared_latent: bool = True

    geometry_hidden: int = 64
    geometry_feature_dim: int = 15
    head_hidden: int = 64
    head_layers: int = 3
    direction_terms: int = 4

    grid_levels: int = 8
    grid_base_resolution: int = 16
    grid_growth: float = 1.5
    grid_features: int = 2
    grid_max_entries: int = 2**18

    proposal_levels: int = 5
    proposal_resolutions: Tuple[int, int] = (64, 128)
    proposal_hidden: int = 16
    proposal_latent: int = 7
    proposal_lambda_terms: int = 2
    proposal_head_hidden: int = 7

    @property
    def label(self) -> str:
        return f"{self.radiance_variant}/{self.density_variant}/" + (
            self.proposal_variant
        )

    @property
    def is_discrete(self) -> bool:
        """Discrete heads only answer at their captured wavelengths."""
        return self.radiance_variant == "C1" or self.density_variant == "sigma1"

    @property
    def uses_3d_path(self) -> bool:
        return self.radiance_variant in ("C", "C1") or self.density_variant in (
            "sigma",
            "sigma0",
            "sigma1",
        )

    @property
    def uses_4d_path(self) -> bool:
        return self.radiance_variant == "C2" or self.density_variant == "sigma2"

    @property
    def geometry_head_dim(self) -> int:
        """Density-related outputs of the 3D geometry network."""
        if self.density_variant == "sigma0":
            return 1
        if self.density_variant == "sigma1":
            return int(self.n_channels or 0)
        if self.density_variant == "sigma" and not self._latent_is_shared:
            return self.latent_dim
        return 0

    @property
    def _latent_is_shared(self) -> bool:
        return self.shared_latent and self.radiance_variant == "C"

    def validate(self, *, bound: bool = True) -> FieldConfig:
        """Check the configuration; `bound=False` skips the channel grid,
        which experiment files leave to the dataset."""
        if self.radiance_variant not in RADIANCE_VARIANTS:
            raise ConfigError(
                f"unknown radiance variant {self.radiance_variant!r}"
            )
        if self.density_variant not in DENSITY_VARIANTS:
            raise ConfigError(
                f"unknown density variant {self.density_variant!r}"
            )
        if self.proposal_variant not in PROPOSAL_VARIANTS:
            raise ConfigError(
                f"unknown proposal variant {self.proposal_variant!r}"
            )
        if bound and self.is_discrete and not self.n_channels:
            raise ConfigError(
                f"{self.label} has a per-channel head and needs n_channels"
            )
        if self.n_channels is not None and self.n_channels < 1:
            raise ConfigError("n_channels must be positive")
        if self.channel_wavelengths is not None:
            cw = np.asarray(self.channel_wavelengths, dtype=np.float64)
            if self.n_channels is not None and cw.size != self.n_channels:
                raise ConfigError(
                    f"{cw.size} channel wavelengths for "
                    f"{self.n_channels} channels"
                )
            if np.any(np.diff(cw) <= 0):
                raise ConfigError("channel wavelengths must be ascending")
        lo, hi = self.wavelength_range
        if not lo < hi:
            raise ConfigError(f"degenerate wavelength range [{lo}, {hi}]")
        if (
            self.density_variant == "sigma"
            and self.shared_latent
            and self.radiance_variant != "C"
        ):
            raise ConfigError(
                "a shared spectral latent needs the latent radiance variant C; "
                "set shared_latent=false"
            )
        for key in (
            "latent_dim",
            "lambda_terms",
            "decoder_hidden",
            "decoder_layers",
            "geometry_hidden",
            "geometry_feature_dim",
            "head_hidden",
            "head_layers",
            "direction_terms",
            "grid_levels",
            "grid_base_resolution",
            "grid_features",
            "proposal_levels",
            "proposal_hidden",
            "proposal_latent",
            "proposal_lambda_terms",
            "proposal_head_hidden",
        ):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        return self

    def replace(self, **changes) -> FieldConfig:
        return dataclasses.replace(self, **changes)

    def with_channels(
        self,
        wavelengths: Sequence[float],
        wavelength_range: Optional[Tuple[float, float]] = None,
    ) -> FieldConfig:
        """Bind the channel grid of the per-channel heads and the encoded
        wavelength range (by default the span of the channels)."""
        cw = tuple(float(w) for w in wavelengths)
        lo, hi = wavelength_range or (cw[0], cw[-1])
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        return self.replace(
            n_channels=len(cw),
            channel_wavelengths=cw,
            wavelength_range=(lo, hi),
        )

    def to_dict(self) -> Dict[str, object]:
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> FieldConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown field config keys: {sorted(unknown)}")
        values = dict(data)
        for key in (
            "channel_wavelengths",
            "wavelength_range",
            "proposal_resolutions",
        ):
            if values.get(key) is not None:
                values[key] = tuple(values[key])  # type: ignore
        return cls(**values).validate(bound=False)  # type: ignore


@dataclass(frozen=True)
class FieldSample:
    density: Tensor  # (n, L)
    radiance: Optional[Tensor]  # (n, L)


class ProposalNetwork:
    """Coarse density used to place samples; P0 ignores the wavelength."""

    __slots__ = ("variant", "grid", "mlp", "head", "lambda_encoding")

    def __init__(
        self,
        config: FieldConfig,
        max_resolution: int,
        rng: np.random.Generator,
        name: str,
    ):
        self.variant = config.proposal_variant
        base = 16
        levels = config.proposal_levels
        growth = (
            (max_resolution / base) ** (1.0 / (levels - 1))
            if levels > 1
            else 1.0
        )
        self.grid = GridEncoding(
            3,
            levels=levels,
            base_resolution=base,
            growth_factor=max(growth, 1.0),
            features_per_level=2,
            max_entries=config.grid_max_entries,
            rng=rng,
            name=f"{name}.grid",
        )
        plambda = self.variant == "Plambda"
        self.mlp = MLP(
            self.grid.output_dim,
            config.proposal_hidden,
            config.proposal_latent if plambda else 1,
            2,
            rng=rng,
            name=f"{name}.mlp",
        )
        self.head: Optional[MLP] = None
        self.lambda_encoding: Optional[SinusoidalEncoding] = None
        if plambda:
            lo, hi = config.wavelength_range
            self.lambda_encoding = SinusoidalEncoding(
                config.proposal_lambda_terms, lo, hi
            )
            self.head = MLP(
                config.proposal_latent + self.lambda_encoding.dim,
                config.proposal_head_hidden,
                1,
                2,
                rng=rng,
                name=f"{name}.head",
            )

    def __call__(self, x_unit: npt.ArrayLike, lam: Optional[float]) -> Tensor:
        points = np.asarray(x_unit, dtype=np.float64)
        n = points.shape[0]
        h = self.mlp(self.grid(points))
        if self.head is None:
            return ad.reshape(ad.shifted_softplus(h), (n,))
        if lam is None:
            raise ValueError(
                "the wavelength-dependent proposal needs a wavelength"
            )
        assert self.lambda_encoding is not None
        enc = self.lambda_encoding(np.array([lam], dtype=np.float64))
        enc_t = ad.broadcast_to(
            ad.constant(enc.astype(h.dtype)), (n, enc.shape[1])
        )
        out = self.head(ad.concat([h, enc_t], axis=-1))
        return ad.reshape(ad.shifted_softplus(out), (n,))

    def parameters(self) -> Dict[str, Tensor]:
        params = {**self.grid.parameters(), **self.mlp.parameters()}
        if self.head is not None:
            params.update(self.head.parameters())
        return params


class Field:
    """Trainable networks of one (radiance, density, proposal) combination."""

    config: FieldConfig
    box: SceneBox

    def __init__(
        self,
        config: FieldConfig,
        rng: np.random.Generator,
        box: Optional[SceneBox] = None,
    ):
        config.validate()
        self.config = config
        self.box = box if box is not None else SceneBox(np.zeros(3), np.ones(3))

        lo, hi = config.wavelength_range
        self.lambda_encoding = SinusoidalEncoding(config.lambda_terms, lo, hi)
        self.direction_encoding = SinusoidalEncoding(
            config.direction_terms, -1.0, 1.0
        )
        geo = config.geometry_feature_dim
        dir_dim = 3 * self.direction_encoding.dim

        self.position_encoder: Optional[GridEncoding] = None
        self.geometry: Optional[MLP] = None
        if config.uses_3d_path:
            self.position_encoder = self._grid(3, rng, "field.grid")
            self.geometry = MLP(
                self.position_encoder.output_dim,
                config.geometry_hidden,
                config.geometry_head_dim + geo,
                2,
                rng=rng,
                name="field.geometry",
            )

        self.position_encoder4: Optional[GridEncoding] = None
        self.geometry4: Optional[MLP] = None
        if config.uses_4d_path:
            self.position_encoder4 = self._grid(4, rng, "field.grid4")
            self.geometry4 = MLP(
                self.position_encoder4.output_dim,
                config.geometry_hidden,
                1 + geo,
                2,
                rng=rng,
                name="field.geometry4",
            )

        head_out = {
            "C": config.latent_dim,
            "C1": int(config.n_channels or 0),
            "C2": 1,
        }[config.radiance_variant]
        self.radiance_head = MLP(
            geo + dir_dim,
            config.head_hidden,
            head_out,
            config.head_layers,
            rng=rng,
            name="field.radiance_head",
        )

        decoder_in = self.lambda_encoding.dim + config.latent_dim
        self.radiance_decoder: Optional[MLP] = None
        if config.radiance_variant == "C":
            self.radiance_decoder = MLP(
                decoder_in,
                config.decoder_hidden,
                1,
                config.decoder_layers,
                rng=rng,
                name="field.radiance_decoder",
            )
        self.density_decoder: Optional[MLP] = None
        if config.density_variant == "sigma":
            self.density_decoder = MLP(
                decoder_in,
                config.decoder_hidden,
                1,
                config.decoder_layers,
                rng=rng,
                name="field.density_decoder",
            )

        self.proposals: Tuple[ProposalNetwork, ...] = tuple(
            ProposalNetwork(config, res, rng, f"proposal{i}")
            for i, res in enumerate(config.proposal_resolutions)
        )

    def _grid(self, dim: int, rng: np.random.Generator, name: str):
        c = self.config
        return GridEncoding(
            dim,
            levels=c.grid_levels,
            base_resolution=c.grid_base_resolution,
            growth_factor=c.grid_growth,
            features_per_level=c.grid_features,
            max_entries=c.grid_max_entries,
            rng=rng,
            name=name,
        )

    def __repr__(self) -> str:
        return f"Field({self.config.label}, {self.parameter_count()} params)"

    # parameters

    def field_parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for part in (
            self.position_encoder,
            self.geometry,
            self.position_encoder4,
            self.geometry4,
            self.radiance_head,
            self.radiance_decoder,
            self.density_decoder,
        ):
            if part is not None:
                params.update(part.parameters())
        return params

    def proposal_parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for proposal in self.proposals:
            params.update(proposal.parameters())
        return params

    def parameters(self) -> Dict[str, Tensor]:
        return {**self.field_parameters(), **self.proposal_parameters()}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # evaluation

    def channel_indices(self, lambdas: npt.ArrayLike) -> IntArray:
        """Exact channel of each wavelength, for the per-channel heads."""
        if self.config.channel_wavelengths is None:
            raise ConfigError(
                f"{self.config.label} needs the channel wavelengths"
            )
        channels = np.asarray(self.config.channel_wavelengths, dtype=np.float64)
        lam = as_wavelengths(lambdas)
        nearest = np.abs(lam[:, None] - channels[None, :]).argmin(axis=1)
        off = np.abs(channels[nearest] - lam) > CHANNEL_TOLERANCE_NM
        if np.any(off):
            raise UnsupportedWavelengthError(
                f"{self.config.label} cannot interpolate: no channel at "
                f"{lam[off].tolist()} nm"
            )
        return nearest

    def _decode(self, decoder: MLP, latent: Tensor, lambdas) -> Tensor:
        """decoder(concat(sin_encode(lambda), latent)) for every pair."""
        n, dim = latent.shape
        enc = self.lambda_encoding(lambdas).astype(latent.dtype)
        count = enc.shape[0]
        lat = ad.broadcast_to(ad.reshape(latent, (n, 1, dim)), (n, count, dim))
        enc_t = ad.broadcast_to(
            ad.constant(enc[None]), (n, count, enc.shape[1])
        )
        out = decoder(ad.concat([enc_t, lat], axis=-1))
        return ad.reshape(out, (n, count))

    def query(
        self,
        positions: npt.ArrayLike,
        directions: Optional[npt.ArrayLike],
        lambdas: npt.ArrayLike,
        *,
        need_radiance: bool = True,
    ) -> FieldSample:
        """Densities (n, L) and, given directions, radiances (n, L)."""
        c = self.config
        x = self.box.normalize(np.asarray(positions).reshape(-1, 3))
        n = x.shape[0]
        lam = as_wavelengths(lambdas)
        count = lam.size

        geo3 = dens3 = None
        if self.geometry is not None:
            assert self.position_encoder is not None
            h = self.geometry(self.position_encoder(x))
            k = c.geometry_head_dim
            dens3 = h[:, :k] if k else None
            geo3 = h[:, k:]

        h4 = None
        if self.geometry4 is not None:
            assert self.position_encoder4 is not None
            lo, hi = c.wavelength_range
            lam_unit = np.clip((lam - lo) / (hi - lo), 0.0, 1.0)
            p4 = np.concatenate(
                [
                    np.repeat(x, count, axis=0),
                    np.tile(lam_unit, n)[:, None],
                ],
                axis=-1,
            )
            h4 = self.geometry4(self.position_encoder4(p4))

        theta_c = None
        radiance = None
        want_radiance = need_radiance and directions is not None
        needs_theta = c.radiance_variant == "C" and (
            want_radiance
            or (c.density_variant == "sigma" and c._latent_is_shared)
        )
        if needs_theta or (want_radiance and c.radiance_variant == "C1"):
            if directions is None:
                raise ValueError(
                    f"{c.label} needs view directions for its spectral latent"
                )
            d_enc = self.direction_encoding.encode_vectors(
                np.asarray(directions).reshape(-1, 3)
            )
            assert geo3 is not None
            head_in = ad.concat(
                [geo3, ad.constant(d_enc.astype(geo3.dtype))], axis=-1
            )
            head = self.radiance_head(head_in)
            if c.radiance_variant == "C":
                theta_c = head
                if want_radiance:
                    assert self.radiance_decoder is not None
                    radiance = ad.sigmoid(
                        self._decode(self.radiance_decoder, theta_c, lam)
                    )
            elif want_radiance:
                idx = self.channel_indices(lam)
                radiance = ad.sigmoid(head[:, idx])
        elif want_radiance and c.radiance_variant == "C2":
            assert h4 is not None and directions is not None
            d_enc = self.direction_encoding.encode_vectors(
                np.asarray(directions).reshape(-1, 3)
            )
            d_rep = np.repeat(d_enc, count, axis=0).astype(h4.dtype)
            head_in = ad.concat([h4[:, 1:], ad.constant(d_rep)], axis=-1)
            radiance = ad.sigmoid(
                ad.reshape(self.radiance_head(head_in), (n, count))
            )

        if c.density_variant == "sigma0":
            assert dens3 is not None
            density = ad.broadcast_to(ad.shifted_softplus(dens3), (n, count))
        elif c.density_variant == "sigma1":
            assert dens3 is not None
            density = ad.shifted_softplus(dens3[:, self.channel_indices(lam)])
        elif c.density_variant == "sigma2":
            assert h4 is not None
            density = ad.shifted_softplus(ad.reshape(h4[:, :1], (n, count)))
        else:
            latent = theta_c if c._latent_is_shared else dens3
            assert latent is not None and self.density_decoder is not None
            density = ad.shifted_softplus(
                self._decode(self.density_decoder, latent, lam)
            )
        return FieldSample(density=density, radiance=radiance)

    def proposal(
        self, stage: int, positions: npt.ArrayLike, lam: Optional[float]
    ) -> Tensor:
        x = self.box.normalize(np.asarray(positions).reshape(-1, 3))
        return self.proposals[stage](x, lam)


def build_field(
    config: FieldConfig,
    rng_seed: int = 0,
    box: Optional[SceneBox] = None,
) -> Field:
    """Deterministic construction: same seed and config, same parameters."""
    return Field(config, np.random.default_rng(rng_seed), box)


def eval_radiance(
    field: Field,
    x: npt.ArrayLike,
    d: npt.ArrayLike,
    lambdas: npt.ArrayLike,
) -> Tensor:
    sample = field.query(x, d, lambdas)
    assert sample.radiance is not None
    return sample.radiance


def eval_density(
    field: Field,
    x: npt.ArrayLike,
    lambdas: npt.ArrayLike,
    directions: Optional[npt.ArrayLike] = None,
) -> Tensor:
    """Densities (n, L); a latent shared with the radiance needs directions."""
    return field.query(x, directions, lambdas, need_radiance=False).density


def eval_proposal(
    field: Field,
    x: npt.ArrayLike,
    lam: Optional[float] = None,
    stage: int = 0,
) -> Tensor:
    return field.proposal(stage, x, lam)
