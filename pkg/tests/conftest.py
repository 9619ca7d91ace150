import pytest
import torch

from vlunitrack.config import TrackerConfig

torch.set_num_threads(1)


@pytest.fixture
def toy_cfg():
    return TrackerConfig()


@pytest.fixture
def tiny_cfg():
    """D=8, one head, 4+4 tokens per view; small enough for finite differences."""
    return TrackerConfig(patch_size=4, template_size=8, search_size=8, embed_dim=8,
                         encoder_depth=1, attn_heads=1, frozen_embed_dim=6)


# acceptance criteria report their verdict here; printed in the terminal summary
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")
