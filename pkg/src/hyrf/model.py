"""The hybrid scene model: explicit Gaussians + decoupled hash fields + decoders.

``HybridModel.render`` runs the full forward path for one camera
(precull -> contract -> encode -> decode -> aggregate -> project ->
rasterize -> background) and ``HybridModel.backward`` pushes an image-space
gradient back into every trainable array.
"""

from dataclasses import dataclass, asdict, replace

import numpy as np

from .errors import ContractViolation, InvalidInputError
from .gaussians import ExplicitGaussianSet, aggregate, aggregate_backward, logit, sigmoid
from .geometry import (
    Aabb,
    contract,
    contract_backward,
    covariance_3d,
    covariance_3d_backward,
    normalize_to_aabb,
    project_gaussians,
    project_gaussians_backward,
)
from .hashgrid import (
    HashField,
    HashFieldConfig,
    direction_encoding_dim,
    encode_direction,
    encode_direction_backward,
)
from .mlp import color_decoder, decode_color, decode_geometry, geometry_decoder
from .render import (
    Splats,
    composite_background,
    composite_background_backward,
    precull,
    rasterize,
    rasterize_backward,
)

# log2 of the radiance table size per scene class; geometry uses one less.
HASH_LOG2_BY_CLASS = {"synthetic": 17, "standard": 18, "large": 21}


@dataclass(frozen=True)
class ModelConfig:
    scene_class: str = "standard"
    n_levels: int = 16
    features_per_entry: int = 2
    base_resolution: int = 16
    finest_resolution: int = 2048
    log2_hash_size: int = 0            # 0 -> derive from scene_class
    hidden_width: int = 64
    hidden_layers: int = 2
    n_frequencies: int = 4
    s_max: float = 0.0                 # 0 -> s_max_fraction * AABB diagonal
    s_max_fraction: float = 0.01
    sphere_radius: float = 100.0
    tau_t: float = 0.2
    cull_tol: float = 0.15

    def __post_init__(self):
        if self.scene_class not in HASH_LOG2_BY_CLASS:
            raise InvalidInputError(f"scene_class must be one of {sorted(HASH_LOG2_BY_CLASS)}")
        if not 0.0 <= self.tau_t <= 1.0:
            raise InvalidInputError("tau_t must lie in [0, 1]")
        if self.sphere_radius <= 0 or self.s_max < 0 or self.s_max_fraction <= 0 or self.cull_tol < 0:
            raise InvalidInputError("sphere_radius, s_max_fraction must be positive; s_max, cull_tol non-negative")
        if self.hidden_width < 1 or self.hidden_layers < 1 or self.n_frequencies < 0:
            raise InvalidInputError("decoder needs >= 1 hidden layer of width >= 1")

    def radiance_field_config(self):
        log2 = self.log2_hash_size or HASH_LOG2_BY_CLASS[self.scene_class]
        return HashFieldConfig(self.n_levels, self.features_per_entry, log2,
                               self.base_resolution, self.finest_resolution)

    def geometry_field_config(self):
        return replace(self.radiance_field_config(),
                       log2_max_entries=self.radiance_field_config().log2_max_entries - 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class RenderOutput:
    image: np.ndarray
    target: object
    cache: object = None


@dataclass
class _ForwardCache:
    cam: object
    kept: np.ndarray
    positions: np.ndarray
    contracted: np.ndarray
    raw: tuple
    geo_cache: list
    color_cache: list
    act: object
    cov3d: np.ndarray
    raster_cache: object
    bg_cache: object


class HybridModel:
    def __init__(self, gaussians: ExplicitGaussianSet, geo_field: HashField, rad_field: HashField,
                 geo_decoder, color_decoder_net, aabb: Aabb, config: ModelConfig, s_max: float):
        self.gaussians = gaussians
        self.geo_field = geo_field
        self.rad_field = rad_field
        self.geo_decoder = geo_decoder
        self.color_decoder = color_decoder_net
        self.aabb = aabb
        self.config = config
        self.s_max = float(s_max)
        # R-VQ codebooks that reproduce the explicit attributes exactly, set
        # when the model came out of a compressed bundle
        self.rvq_source = None

    @classmethod
    def initialize(cls, points, colors, aabb: Aabb, config: ModelConfig = ModelConfig(), *,
                   seed=0, dtype=np.float32, init_opacity=0.1):
        """Fresh model seeded from a point cloud (e.g. SfM points)."""
        from scipy.spatial import cKDTree

        rng = np.random.default_rng(seed)
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        colors = np.clip(np.asarray(colors, dtype=np.float64).reshape(-1, 3), 0.02, 0.98)
        s_max = config.s_max or config.s_max_fraction * aabb.diagonal
        geo_cfg, rad_cfg = config.geometry_field_config(), config.radiance_field_config()
        geo_field = HashField(geo_cfg, rng=rng, dtype=dtype)
        rad_field = HashField(rad_cfg, rng=rng, dtype=dtype)
        geo_dec = geometry_decoder(geo_cfg.output_dim, config.hidden_width, config.hidden_layers,
                                   rng=rng, dtype=dtype)
        col_dec = color_decoder(rad_cfg.output_dim + direction_encoding_dim(config.n_frequencies),
                                config.hidden_width, config.hidden_layers, rng=rng, dtype=dtype)
        if len(points) > 1:
            k = min(4, len(points))
            dist, _ = cKDTree(points).query(points, k=k)
            mean_sq = np.mean(dist[:, 1:] ** 2, axis=1)
            init_scale = np.sqrt(np.maximum(mean_sq, 1e-14))
        else:
            init_scale = np.full(1, 0.1 * s_max)
        scales = logit(np.clip(init_scale / s_max, 0.01, 0.99))
        gaussians = ExplicitGaussianSet.create(
            points, logit(colors), scales, np.full(len(points), logit(init_opacity)), dtype=dtype
        )
        return cls(gaussians, geo_field, rad_field, geo_dec, col_dec, aabb, config, s_max)

    # -- parameters ------------------------------------------------------------

    def zero_grad(self):
        self.geo_field.zero_grad()
        self.rad_field.zero_grad()
        self.geo_decoder.zero_grad()
        self.color_decoder.zero_grad()

    def neural_parameters(self):
        """``(name, param, grad)`` triples for every non-explicit array."""
        out = []
        for fname, fld in (("geo_field", self.geo_field), ("rad_field", self.rad_field)):
            for i, (t, g) in enumerate(zip(fld.tables, fld.grads)):
                out.append((f"{fname}.{i}", t, g))
        for dname, net in (("geo_decoder", self.geo_decoder), ("color_decoder", self.color_decoder)):
            for i, (p, g) in enumerate(zip(net.parameters(), net.gradients())):
                out.append((f"{dname}.{i}", p, g))
        return out

    # -- neural queries ----------------------------------------------------------

    def contract_points(self, positions):
        return contract(normalize_to_aabb(positions, self.aabb))

    def geometry_at(self, positions):
        """Raw neural geometry ``(opacity, scale, rotation)`` at world positions."""
        (ra, rs, rr), _ = decode_geometry(self.geo_field.encode(self.contract_points(positions)), self.geo_decoder)
        return ra, rs, rr

    def activated_opacity(self):
        ra, _, _ = self.geometry_at(self.gaussians.positions)
        return sigmoid(ra + self.gaussians.opacities)

    def activated_geometry(self):
        """``(alpha, scale (N,3), rotation (N,4))`` for every Gaussian, view-independent."""
        g = self.gaussians
        ra, rs, rr = self.geometry_at(g.positions)
        act = aggregate(ra, rs, rr, np.zeros((len(g), 3)), g.colors, g.scales, g.opacities, self.s_max)
        return act.alpha, act.scale, act.rotation

    def query(self, indices, cam_pos):
        """Activated attributes of the Gaussians at ``indices`` seen from ``cam_pos``."""
        g = self.gaussians
        positions = g.positions[indices].astype(np.float64)
        contracted = self.contract_points(positions)
        (ra, rs, rr), geo_cache = decode_geometry(self.geo_field.encode(contracted), self.geo_decoder)
        f_dir = encode_direction(positions, cam_pos, self.config.n_frequencies)
        rc, color_cache = decode_color(self.rad_field.encode(contracted), f_dir, self.color_decoder)
        act = aggregate(ra, rs, rr, rc, g.colors[indices], g.scales[indices], g.opacities[indices], self.s_max)
        return positions, contracted, (ra, rs, rr, rc), geo_cache, color_cache, act

    # -- render ------------------------------------------------------------------

    def render(self, cam, *, cull=True, tau_t=None, need_cache=False):
        cfg = self.config
        tau_t = cfg.tau_t if tau_t is None else tau_t
        g = self.gaussians
        if cull:
            kept = precull(g.positions, cam, cfg.cull_tol).kept_indices
        else:
            kept = precull(g.positions, cam, np.inf).kept_indices
        positions, contracted, raw, geo_cache, color_cache, act = self.query(kept, cam.center)
        cov3d = covariance_3d(act.scale, act.rotation)
        mean2d, cov2d, depth, _ = project_gaussians(positions, cov3d, cam)
        splats = Splats(mean2d, cov2d, depth, act.alpha, act.color)
        target, raster_cache = rasterize(splats, cam.width, cam.height, need_cache=True)
        image, bg_cache = composite_background(
            target, cam, self.rad_field, self.color_decoder, self.aabb,
            cfg.sphere_radius, tau_t, cfg.n_frequencies, need_cache=True,
        )
        cache = None
        if need_cache:
            cache = _ForwardCache(cam, kept, positions, contracted, raw, geo_cache, color_cache,
                                  act, cov3d, raster_cache, bg_cache)
        return RenderOutput(image, target, cache)

    def backward(self, out: RenderOutput, grad_image):
        """Accumulate neural gradients; return explicit gradients and screen-space stats.

        Returned dict: ``positions, colors, scales, opacities`` (full-length
        arrays) plus ``visible`` (kept indices) and ``mean2d_grad`` (kept x 2,
        in pixels).
        """
        c = out.cache
        if c is None:
            raise ContractViolation("render(need_cache=True) is required before backward")
        g = self.gaussians
        grad_image = np.asarray(grad_image, dtype=np.float64)
        grad_t = composite_background_backward(out.target, c.bg_cache, self.rad_field,
                                               self.color_decoder, grad_image)
        rg = rasterize_backward(c.raster_cache, grad_image, grad_t)
        g_pos, g_cov3d = project_gaussians_backward(c.positions, c.cov3d, c.cam, rg["means2d"], rg["cov2d"])
        g_scale, g_rot = covariance_3d_backward(c.act.scale, c.act.rotation, g_cov3d)
        ra, rs, rr, rc = c.raw
        k = c.kept
        agg = aggregate_backward(ra, rs, rr, rc, g.colors[k], g.scales[k], g.opacities[k], self.s_max,
                                 c.act, {"alpha": rg["alphas"], "color": rg["colors"],
                                         "scale": g_scale, "rotation": g_rot})
        g_geo_out = np.concatenate([agg["raw_opacity"][:, None], agg["raw_scale"], agg["raw_rotation"]], axis=1)
        _, g_fgeo = self.geo_decoder.backward(c.geo_cache, g_geo_out)
        _, g_cin = self.color_decoder.backward(c.color_cache, agg["raw_color"])
        n_rad = self.rad_field.output_dim
        g_contracted = self.geo_field.backward(c.contracted, g_fgeo)
        g_contracted += self.rad_field.backward(c.contracted, g_cin[:, :n_rad])
        normalized = normalize_to_aabb(c.positions, self.aabb)
        g_pos += contract_backward(normalized, g_contracted) / self.aabb.half_extent
        g_pos += encode_direction_backward(c.positions, c.cam.center, g_cin[:, n_rad:], self.config.n_frequencies)

        n = len(g)
        grads = {
            "positions": np.zeros((n, 3)),
            "colors": np.zeros((n, 3)),
            "scales": np.zeros(n),
            "opacities": np.zeros(n),
        }
        grads["positions"][k] = g_pos
        grads["colors"][k] = agg["colors"]
        grads["scales"][k] = agg["scales"]
        grads["opacities"][k] = agg["opacities"]
        grads["visible"] = k
        grads["mean2d_grad"] = rg["means2d"]
        return grads
