"""Reference constants at full scale: parameter counts and ADAM learning rates."""

from __future__ import annotations

from .modules import ModuleSpec, param_count

FULL_FEATURE_DIM = 4096

TABLE_COLUMNS = (
    "CReZ-CReS", "CReZ-LRS", "LRS", "LX", "LCre",
    "LBX-Small", "LBX-Med", "LBX-Large", "LBCre-Small", "LBCre-Med", "LBCre-Large",
)

# printed counts; the SR LBCre-Med entry appears as "10,83140" and is read as 1,083,140
REFERENCE_PARAM_COUNTS = {
    "SR": (66_108, 65_916, 65_852, 65_756, 65_852, 65_684, 1_066_244, 4_461_572,
           65_780, 1_083_140, 4_725_764),
    "MTS": (269_028, 266_724, 265_700, 264_548, 265_700, 263_492, 1_066_244, 4_461_572,
            264_644, 1_083_140, 4_725_764),
    "LOC": (1_149_828, 1_116_036, 1_102_222, 1_084_046, 1_099_652, 1_067_534, 4_466_702,
            9_457_678, 1_083_140, 4_725_764, 10_500_100),
}

# Cre-family LOC columns are only consistent with 2-value heads
TWO_VALUE_HEAD_COLUMNS = {"CReZ-CReS", "CReZ-LRS", "LCre", "LBCre-Small", "LBCre-Med", "LBCre-Large"}

_COLUMN_MODULE = {
    "CReZ-CReS": "CReZ-CReS", "CReZ-LRS": "CReZ-LRS", "LRS": "LRS", "LX": "LR", "LCre": "LCre",
    "LBX-Small": "LBR-small", "LBX-Med": "LBR-med", "LBX-Large": "LBR-large",
    "LBCre-Small": "LBCre-small", "LBCre-Med": "LBCre-med", "LBCre-Large": "LBCre-large",
}


def column_spec(column: str, task_kind: str, vocab_size: int | None = None) -> ModuleSpec:
    return ModuleSpec.named(_COLUMN_MODULE[column], task_kind, FULL_FEATURE_DIM, vocab_size)


def param_table():
    """Rows of (task, column, count with task vocabulary, count with 2-value heads, printed)."""
    rows = []
    for task, printed in REFERENCE_PARAM_COUNTS.items():
        for column, ref in zip(TABLE_COLUMNS, printed):
            native = param_count(column_spec(column, task))
            binary = param_count(column_spec(column, task, 2))
            rows.append((task, column, native, binary, ref))
    return rows


def table_matches(row) -> bool:
    task, column, native, binary, ref = row
    if task == "LOC" and column in TWO_VALUE_HEAD_COLUMNS:
        return binary == ref
    return native == ref


# -- learning rates ----------------------------------------------------------

LR_TASKS = (
    "SR:two_way", "SR:four_way_double_binary", "SR:four_way_quadrant",
    "MTS:2way_stationary", "MTS:2way_vert_motion", "MTS:2way_horiz_flip", "MTS:2way_motion_flip",
    "MTS:4way_2shown", "MTS:4way_2shown_vert_motion", "MTS:4way_4shown_stationary",
    "MTS:4way_4shown_permuted", "LOC:default",
)

_a, _b, _c, _d = 1e-3, 5e-4, 2e-4, 1e-4

LEARNING_RATES = {
    "CReZ-CReS": (_a, _a, _a, _b, _b, _b, _b, _b, _b, _b, _b, _d),
    "CReZ-LRS": (_a, _a, _a, _b, _b, _b, _b, _b, _b, _b, _b, _d),
    "LRS": (_a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _c, _d),
    "LS": (_a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _c, _d),
    "LR": (_a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _d),
    "LT": (_a, _a, _a, _a, _d, _a, _a, _a, _a, _d, _d, _d),
    "LSig": (_a, _a, _a, _a, _d, _a, _a, _a, _a, _d, _d, _d),
    "LE": (_a, _a, _d, _a, _a, _a, _a, _a, _a, _a, _a, _d),
    "LCre": (_a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _d),
    "LBR-small": (_a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _d),
    "LBR-med": (_a, _a, _a, _d, _d, _d, _d, _d, _d, _d, _d, _d),
    "LBR-large": (_a, _a, _d, _d, _d, _d, _d, _d, _d, _d, _d, _d),
    "LBT-small": (_d, _d, _d, _a, _a, _a, _a, _a, _a, _d, _d, _d),
    "LBT-med": (_d, _d, _d, _a, _a, _a, _a, _a, _a, _d, _d, _d),
    "LBT-large": (_d,) * 12,
    "LBSig-small": (_d, _d, _d, _a, _a, _a, _a, _a, _a, _d, _a, _d),
    "LBSig-med": (_d, _d, _d, _a, _a, _a, _a, _a, _a, _d, _d, _d),
    "LBSig-large": (_d,) * 12,
    "LBE-small": (_a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _a, _d),
    "LBE-med": (_a, _a, _a, _d, _d, _d, _d, _d, _d, _a, _d, _d),
    "LBE-large": (_d, _d, _a, _d, _d, _d, _d, _d, _d, _d, _d, _d),
    "LBCre-small": (_a, _a, _a, _a, _a, _d, _a, _a, _a, _a, _a, _d),
    "LBCre-med": (_a, _a, _a, _d, _d, _d, _d, _d, _d, _a, _d, _d),
    "LBCre-large": (_d,) * 12,
}

DEFAULT_LR = 1e-3

# modules absent from the published table; chosen by a sweep on seeds outside the acceptance set
UNLISTED_LR = {"Obvious": 1e-2}


def default_learning_rate(task_name: str, module_name: str) -> float:
    if module_name in UNLISTED_LR:
        return UNLISTED_LR[module_name]
    row = LEARNING_RATES.get(module_name)
    if row is None or task_name not in LR_TASKS:
        return DEFAULT_LR
    return row[LR_TASKS.index(task_name)]
