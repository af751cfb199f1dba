import sys
from pathlib import Path

import pytest

from cmswitch.deha import hw_from_dict, load_hw

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"
sys.path.insert(0, str(Path(__file__).resolve().parent))

# (graph, hw) pairs compiled by the end-to-end and acceptance tests
COMPILE_FIXTURES = [
    ("graphs/toy_chain3.json", "configs/tiny.json"),
    ("graphs/low_ai.json", "configs/memory_starved.toml"),
    ("graphs/attention_block.json", "configs/dynaplasia.toml"),
    ("graphs/vgg_like.json", "configs/dynaplasia.toml"),
    ("graphs/vgg16.json", "configs/dynaplasia.toml"),
    ("graphs/opt_layer.json", "configs/dynaplasia.toml"),
]


def make_hw(**over):
    base = dict(n_cim=96, grid=[8, 12], array_h=320, array_w=320, mem_data_per_cycle=8,
                main_data_per_cycle=8, buffer_bytes=81920, switch_m_to_c_cycles=1,
                switch_c_to_m_cycles=1, weight_write_cycles=320, read_cycles=1, write_cycles=1)
    base.update(over)
    return hw_from_dict(base)


@pytest.fixture(scope="session")
def table2_hw():
    return load_hw(ROOT / "configs" / "dynaplasia.toml")


@pytest.fixture(scope="session")
def tiny_hw():
    return load_hw(ROOT / "configs" / "tiny.json")
