import pytest

from selfref.config import RunConfig


@pytest.fixture
def tiny_cfg(tmp_path):
    """A run small enough for unit tests: two short phases on small networks."""
    return RunConfig(pt_steps=900, ft_steps=500, hidden=16, U=8, encoder_hidden=8, num_heads=2, batch_size=16,
                     seed_frames=200, window=2000, log_every=100, eval_every=250, eval_episodes=1,
                     distill_epochs=3, distill_batch=64, kl_states=50, query_hidden=8, out=str(tmp_path / "pt"))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance")
        for line in results.values():
            terminalreporter.write_line(line)
