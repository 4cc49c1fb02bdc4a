import pytest
from hypothesis import settings

from ovfuse.synth import Box, CameraRing, ModelSpec, SyntheticSceneSpec, synth_generate, write_synthetic

# fixed example sequence so the suite gives the same verdict on every run
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

# schedule short enough for CLI round trips
QUICK = {"schedule.total_epochs": 4, "schedule.phase1_epochs": 2, "superpoints.min_size": 5}


def small_spec() -> SyntheticSceneSpec:
    """A two-object room of about 1.4k points seen by four cameras."""
    return SyntheticSceneSpec(
        room=(3.0, 3.0, 2.0),
        objects=[Box((0.8, 0.8, 0), (1.4, 1.4, 0.8), "chair"), Box((1.6, 1.5, 0), (2.3, 2.2, 0.7), "table")],
        class_names=["chair", "table", "wall", "floor"],
        confusion={"chair": "table", "table": "wall"},
        models=[ModelSpec("A", "dense", {"chair": 0.8}), ModelSpec("B", "mask", {"table": 0.8})],
        cameras=CameraRing(count=4, radius=1.2, height=1.8, target_offset=0.8, width=48, height_px=36),
        vertex_spacing=0.15, corpus_images=4, corpus_size=16, embedding_dim=8,
    )


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """Directory holding the small scene in pipeline layout; returns the config path."""
    return write_synthetic(synth_generate(small_spec(), 0), tmp_path_factory.mktemp("small"))
