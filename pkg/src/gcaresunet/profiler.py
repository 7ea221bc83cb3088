"""Analytic parameter and MAC accounting.

Counts are derived from the configuration alone; no tensors are allocated.

Conventions:
  * conv MACs = out_H * out_W * C_out * (C_in / groups) * k^2; linear MACs = C_in * C_out
  * BN, activations, max-pool, residual adds and upsampling cost 1 op per output
    element and go to the ``elementwise`` column, which is excluded from MACs
  * attention blocks count their directional/global pooling and the final
    broadcast reweighting as MACs (1 per element touched); their BN/ReLU/sigmoid
    on pooled descriptors go to ``elementwise``
  * FLOPs = 2 * MACs
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from .attention import CBAM_SPATIAL_KERNEL, COORDATT_MIN_HIDDEN, GCAConfig, check_variant
from .backbone import BottleneckSpec
from .errors import ConfigError
from .model import ModelConfig
from .numerics import conv_output_size


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int = 0
    macs: int = 0
    elementwise: int = 0
    attention: bool = False


@dataclass
class CostReport:
    rows: List[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    @property
    def total_elementwise(self) -> int:
        return sum(r.elementwise for r in self.rows)

    @property
    def attention_params(self) -> int:
        return sum(r.params for r in self.rows if r.attention)

    @property
    def attention_macs(self) -> int:
        return sum(r.macs for r in self.rows if r.attention)

    def scaled(self, batch: int) -> "CostReport":
        return CostReport([LayerCost(r.name, r.params, r.macs * batch, r.elementwise * batch,
                                     r.attention) for r in self.rows])

    def table_rows(self) -> List[List[str]]:
        out = [["layer", "params", "MACs", "elementwise", "attention"]]
        for r in self.rows:
            out.append([r.name, str(r.params), str(r.macs), str(r.elementwise),
                        "yes" if r.attention else ""])
        out.append(["TOTAL", str(self.total_params), str(self.total_macs),
                    str(self.total_elementwise), ""])
        out.append(["attention subtotal", str(self.attention_params), str(self.attention_macs),
                    "", ""])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.table_rows())
        return buf.getvalue()

    def summary(self) -> str:
        share = self.attention_macs / self.total_macs if self.total_macs else 0.0
        return (f"params: {self.total_params:,}\n"
                f"MACs: {self.total_macs:,}\n"
                f"FLOPs (2*MACs): {self.total_flops:,}\n"
                f"elementwise ops: {self.total_elementwise:,}\n"
                f"attention params: {self.attention_params:,}\n"
                f"attention MACs: {self.attention_macs:,} ({100 * share:.3f}% of MACs)\n")


# --- layer primitives --------------------------------------------------------

def conv_cost(name: str, cin: int, cout: int, k: int, h_out: int, w_out: int,
              groups: int = 1, bias: bool = False, attention: bool = False) -> LayerCost:
    params = (cin // groups) * k * k * cout + (cout if bias else 0)
    macs = h_out * w_out * cout * (cin // groups) * k * k
    return LayerCost(name, params, macs, 0, attention)


def bn_cost(name: str, c: int, h: int, w: int, attention: bool = False) -> LayerCost:
    return LayerCost(name, 2 * c, 0, c * h * w, attention)


def elementwise_cost(name: str, n: int) -> LayerCost:
    return LayerCost(name, 0, 0, n)


def linear_cost(name: str, cin: int, cout: int) -> LayerCost:
    return LayerCost(name, cin * cout, cin * cout, 0, True)


def attention_costs(prefix: str, variant: str, c: int, h: int, w: int,
                    gca: GCAConfig = GCAConfig()) -> List[LayerCost]:
    v = check_variant(variant)
    chw = c * h * w
    if v == "none":
        return []
    if v == "gca":
        g, hid = gca.groups, gca.hidden(c)
        n = h + w
        return [
            LayerCost(f"{prefix}.pool", 0, 4 * chw, c * n, True),
            conv_cost(f"{prefix}.reduce", c, g * hid, 1, n, 1, groups=g, attention=True),
            LayerCost(f"{prefix}.bn", 2 * hid, 0, 2 * g * hid * n, True),
            conv_cost(f"{prefix}.expand", g * hid, c, 1, n, 1, groups=g, attention=True),
            LayerCost(f"{prefix}.apply", 0, 2 * chw, c * n, True),
        ]
    if v == "se":
        hid = max(c // gca.reduction, 1)
        return [
            LayerCost(f"{prefix}.pool", 0, chw, 0, True),
            linear_cost(f"{prefix}.fc1", c, hid),
            linear_cost(f"{prefix}.fc2", hid, c),
            LayerCost(f"{prefix}.apply", 0, chw, hid + c, True),
        ]
    if v == "cbam":
        hid = max(c // gca.reduction, 1)
        k = CBAM_SPATIAL_KERNEL
        return [
            LayerCost(f"{prefix}.channel_pool", 0, 2 * chw, 0, True),
            LayerCost(f"{prefix}.fc1", c * hid, 2 * c * hid, 2 * hid, True),
            LayerCost(f"{prefix}.fc2", hid * c, 2 * hid * c, 2 * c, True),
            LayerCost(f"{prefix}.channel_apply", 0, chw, 0, True),
            LayerCost(f"{prefix}.spatial_pool", 0, 2 * chw, 0, True),
            conv_cost(f"{prefix}.spatial", 2, 1, k, h, w, attention=True),
            LayerCost(f"{prefix}.spatial_apply", 0, chw, h * w, True),
        ]
    # coordatt
    hid = max(c // gca.reduction, COORDATT_MIN_HIDDEN)
    n = h + w
    return [
        LayerCost(f"{prefix}.pool", 0, 2 * chw, 0, True),
        conv_cost(f"{prefix}.conv1", c, hid, 1, n, 1, attention=True),
        bn_cost(f"{prefix}.bn1", hid, n, 2, attention=True),
        conv_cost(f"{prefix}.conv_h", hid, c, 1, h, 1, attention=True),
        conv_cost(f"{prefix}.conv_w", hid, c, 1, 1, w, attention=True),
        LayerCost(f"{prefix}.apply", 0, 2 * chw, c * n, True),
    ]


def bottleneck_costs(prefix: str, spec: BottleneckSpec, h: int, w: int
                     ) -> Tuple[List[LayerCost], int, int]:
    p, out = spec.planes, spec.out_channels
    ho, wo = conv_output_size(h, 3, spec.stride, 1), conv_output_size(w, 3, spec.stride, 1)
    rows = [
        conv_cost(f"{prefix}.conv1", spec.in_channels, p, 1, h, w),
        bn_cost(f"{prefix}.bn1", p, h, w),
        elementwise_cost(f"{prefix}.relu1", p * h * w),
        conv_cost(f"{prefix}.conv2", p, p, 3, ho, wo),
        bn_cost(f"{prefix}.bn2", p, ho, wo),
        elementwise_cost(f"{prefix}.relu2", p * ho * wo),
        conv_cost(f"{prefix}.conv3", p, out, 1, ho, wo),
        bn_cost(f"{prefix}.bn3", out, ho, wo),
    ]
    rows += attention_costs(f"{prefix}.attn", spec.attention, out, ho, wo, spec.gca)
    if spec.has_projection:
        rows.append(conv_cost(f"{prefix}.downsample.0", spec.in_channels, out, 1, ho, wo))
        rows.append(bn_cost(f"{prefix}.downsample.1", out, ho, wo))
    rows.append(elementwise_cost(f"{prefix}.add_relu", 2 * out * ho * wo))
    return rows, ho, wo


def model_costs(cfg: ModelConfig, input_size: int) -> List[LayerCost]:
    bb, dec = cfg.backbone, cfg.decoder
    s = input_size
    rows: List[LayerCost] = []
    h = conv_output_size(s, 7, 2, 3)
    rows += [
        conv_cost("backbone.conv1", 3, bb.stem_channels, 7, h, h),
        bn_cost("backbone.bn1", bb.stem_channels, h, h),
        elementwise_cost("backbone.relu", bb.stem_channels * h * h),
    ]
    sizes = [h]
    h = conv_output_size(h, 3, 2, 1)
    rows.append(elementwise_cost("backbone.maxpool", bb.stem_channels * h * h))
    cin = bb.stem_channels
    for i, (depth, planes) in enumerate(zip(bb.stage_depths, bb.stage_planes)):
        for j in range(depth):
            stride = (1 if i == 0 else 2) if j == 0 else 1
            spec = BottleneckSpec(cin, planes, stride, cfg.attention, cfg.gca)
            block, h, _ = bottleneck_costs(f"backbone.layer{i + 1}.{j}", spec, h, h)
            rows += block
            cin = spec.out_channels
        sizes.append(h)
    pyr = bb.out_channels
    ins = dec.in_filters(pyr)
    for lvl in (4, 3, 2, 1):
        hs = sizes[lvl - 1]
        cin, cout = ins[lvl - 1], dec.out_filters[lvl - 1]
        below = pyr[4] if lvl == 4 else dec.out_filters[lvl]
        rows += [
            elementwise_cost(f"decoder.up{lvl}.upsample", below * hs * hs),
            conv_cost(f"decoder.up{lvl}.conv1", cin, cout, 3, hs, hs, bias=True),
            elementwise_cost(f"decoder.up{lvl}.relu1", cout * hs * hs),
            conv_cost(f"decoder.up{lvl}.conv2", cout, cout, 3, hs, hs, bias=True),
            elementwise_cost(f"decoder.up{lvl}.relu2", cout * hs * hs),
        ]
    rows += [
        elementwise_cost("decoder.upsample", dec.out_filters[0] * s * s),
        conv_cost("decoder.refine", dec.out_filters[0], dec.refine_channels, 3, s, s, bias=True),
        elementwise_cost("decoder.refine_relu", dec.refine_channels * s * s),
        conv_cost("decoder.head", dec.refine_channels, dec.num_classes, 1, s, s, bias=True),
    ]
    return rows


# --- public API --------------------------------------------------------------

CostSource = Union[ModelConfig, Iterable[LayerCost]]


def _rows(src: CostSource, input_size=None) -> List[LayerCost]:
    if isinstance(src, ModelConfig):
        return model_costs(src, input_size or src.input_size)
    return list(src)


def count_params(src: CostSource) -> CostReport:
    """Parameter report for a model config (or an explicit list of layer costs)."""
    return CostReport(_rows(src))


def count_macs(src: CostSource, input_size: int = None, batch: int = 1) -> CostReport:
    if input_size is not None and input_size % 32:
        raise ConfigError("input size must be divisible by 32")
    rep = CostReport(_rows(src, input_size))
    return rep.scaled(batch) if batch != 1 else rep


@dataclass(frozen=True)
class AttentionDelta:
    variant: str
    params: int
    macs: int
    delta_params: int
    delta_macs: int
    attention_params: int
    attention_macs: int


def compare_attention(cfg: ModelConfig, variants: Sequence[str], input_size: int = None
                      ) -> Tuple[Dict[str, CostReport], List[AttentionDelta]]:
    if len(variants) < 2:
        raise ConfigError("compare_attention needs at least 2 variants")
    size = input_size or cfg.input_size
    base = CostReport(model_costs(cfg.replace(attention="none"), size))
    reports: Dict[str, CostReport] = {}
    deltas = []
    for v in variants:
        v = check_variant(v)
        rep = CostReport(model_costs(cfg.replace(attention=v), size))
        reports[v] = rep
        deltas.append(AttentionDelta(
            v, rep.total_params, rep.total_macs,
            rep.total_params - base.total_params, rep.total_macs - base.total_macs,
            rep.attention_params, rep.attention_macs,
        ))
    return reports, deltas


def delta_table(deltas: Sequence[AttentionDelta]) -> List[List[str]]:
    out = [["variant", "params", "delta_params", "MACs", "delta_MACs", "attn_MAC_share_%"]]
    for d in deltas:
        share = 100.0 * d.attention_macs / d.macs if d.macs else 0.0
        out.append([d.variant, str(d.params), str(d.delta_params), str(d.macs),
                    str(d.delta_macs), f"{share:.4f}"])
    return out


def attention_block_params(variant: str, channels: int, gca: GCAConfig = GCAConfig()) -> int:
    return sum(r.params for r in attention_costs("attn", variant, channels, 1, 1, gca))
