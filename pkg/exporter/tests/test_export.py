"""Export pipeline checks.

Backbones run with random weights (pretrained=False) so the suite works
offline; conformance is about format and shape, not feature quality.
The search engine's strict reader is the validation oracle.
"""
import numpy as np
import pytest
from click.testing import CliRunner

from cnnexport.backbones import BackboneError, layer_channels, load_backbone
from cnnexport.cli import main
from cnnexport.export import ExportError, ExportJob, export, read_manifest

from autotta.cache import FeatureCache


def write_images(tmp_path, n, size=40):
    from PIL import Image as PILImage

    rng = np.random.default_rng(11)
    lines = []
    for i in range(1, n + 1):
        arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        path = tmp_path / f"img_{i}.png"
        PILImage.fromarray(arr).save(path)
        lines.append(f"{i}\t{path}")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


SMALL_GRID = [(10, 3), (2, 5), (8, 1)]  # Solarize, Rotate, Invert


def job(manifest, out, **kwargs):
    defaults = dict(
        manifest=str(manifest),
        backbone="alexnet",
        layer="conv5",
        out_path=str(out),
        pretrained=False,
    )
    defaults.update(kwargs)
    return ExportJob(**defaults)


class TestExport:
    def test_cache_passes_strict_reader(self, tmp_path):
        manifest = write_images(tmp_path, 2)
        out = tmp_path / "f.ttac"
        report = export(job(manifest, out), grid=SMALL_GRID)
        assert report.entry_count == 2 * 4  # baseline + 3 grid entries
        cache = FeatureCache(out)  # strict validation
        assert cache.header.feature_dim == 256
        assert cache.header.extractor_name == "alexnet:conv5"
        assert cache.header.profile.name == "trademark"
        assert cache.image_ids == [1, 2]
        v = cache.get(1, 10, 3)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-3)

    def test_dim_256_alexnet_conv5(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        out = tmp_path / "f.ttac"
        report = export(job(manifest, out), grid=[(8, 1)])
        assert report.feature_dim == 256
        assert FeatureCache(out).header.feature_dim == 256

    def test_dim_512_vgg16_conv5(self, tmp_path):
        manifest = write_images(tmp_path, 1, size=48)
        out = tmp_path / "f.ttac"
        report = export(
            job(manifest, out, backbone="vgg16", layer="conv5"), grid=[(8, 1)]
        )
        assert report.feature_dim == 512
        assert FeatureCache(out).header.feature_dim == 512

    def test_pca_whitening_embedded(self, tmp_path):
        manifest = write_images(tmp_path, 4)
        out = tmp_path / "f.ttac"
        report = export(job(manifest, out, pca_dim=3), grid=[(8, 1)])
        assert report.feature_dim == 3
        cache = FeatureCache(out)
        assert cache.header.feature_dim == 3
        assert cache.header.pca is not None
        assert cache.header.pca.input_dim == 256
        assert cache.header.pca.output_dim == 3

    def test_baseline_key_present(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        out = tmp_path / "f.ttac"
        export(job(manifest, out), grid=SMALL_GRID)
        cache = FeatureCache(out)
        assert (1, 0, 1) in cache

    def test_unknown_layer(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        with pytest.raises(BackboneError):
            export(job(manifest, tmp_path / "f.ttac", layer="conv9"), grid=[(8, 1)])

    def test_unknown_aggregation(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        with pytest.raises(ExportError):
            job(manifest, tmp_path / "f.ttac", aggregation="avgmax")

    def test_missing_image_recorded(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        with open(manifest, "a") as fh:
            fh.write(f"9\t{tmp_path/'missing.png'}\n")
        out = tmp_path / "f.ttac"
        report = export(job(manifest, out), grid=[(8, 1)])
        assert report.errors and report.errors[0][0] == 9
        assert FeatureCache(out).image_ids == [1]

    def test_all_aggregations_valid(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        for agg in ("mac", "spoc", "gem", "rmac", "crow"):
            out = tmp_path / f"{agg}.ttac"
            export(job(manifest, out, aggregation=agg), grid=[(8, 1)])
            cache = FeatureCache(out)
            assert int(cache.header.aggregation) == __import__(
                "cnnexport.aggregate", fromlist=["AGGREGATION_TAGS"]
            ).AGGREGATION_TAGS[agg]


class TestManifest:
    def test_bad_line(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("1 not-tab-separated\n")
        with pytest.raises(ExportError, match=":1"):
            read_manifest(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("")
        with pytest.raises(ExportError):
            read_manifest(p)


class TestBackbones:
    def test_registry_channels(self):
        assert layer_channels("alexnet", "conv5") == 256
        assert layer_channels("vgg16", "conv5") == 512
        assert layer_channels("resnet50", "pool5") == 2048
        assert layer_channels("densenet121", "denseblock4") == 1024

    def test_spatial_output(self):
        from cnnexport.backbones import extract_fmap

        module = load_backbone("alexnet", "conv5", pretrained=False)
        rng = np.random.default_rng(12)
        arr = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
        fmap = extract_fmap(module, arr)
        assert fmap.shape[0] == 256
        assert fmap.ndim == 3 and fmap.shape[1] > 1 and fmap.shape[2] > 1


class TestCli:
    def test_missing_manifest_exit_2(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "--manifest", str(tmp_path / "none.tsv"),
                "--backbone", "alexnet",
                "--layer", "conv5",
                "--out", str(tmp_path / "f.ttac"),
            ],
        )
        assert result.exit_code == 2

    def test_bad_layer_exit_1(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "--manifest", str(manifest),
                "--backbone", "alexnet",
                "--layer", "conv7",
                "--out", str(tmp_path / "f.ttac"),
                "--no-pretrained",
            ],
        )
        assert result.exit_code == 1
