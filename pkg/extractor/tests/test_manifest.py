import pytest

from uvse_extract.manifest import ExtractionManifest, ResizePolicy, manifest_from_directory


class TestResizePolicy:
    def test_defaults_round_trip_to_json(self):
        assert ResizePolicy().to_json() == {"side": 256, "crop": 224, "interpolation": "bilinear"}

    def test_side_smaller_than_crop_rejected(self):
        with pytest.raises(ValueError, match="smaller than the crop"):
            ResizePolicy(side=100)

    def test_nonpositive_crop_rejected(self):
        with pytest.raises(ValueError, match="crop must be positive"):
            ResizePolicy(side=10, crop=0)

    def test_unknown_interpolation_rejected(self):
        with pytest.raises(ValueError, match="interpolation"):
            ResizePolicy(interpolation="nearest")


class TestManifest:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate image id"):
            ExtractionManifest(
                entries=[("a", "x.png"), ("a", "y.png")], model="resnet18", out_path="o"
            )

    def test_empty_id_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            ExtractionManifest(entries=[("", "x.png")], model="resnet18", out_path="o")

    def test_empty_out_path_rejected(self):
        with pytest.raises(ValueError, match="out_path"):
            ExtractionManifest(entries=[], model="resnet18", out_path="")


class TestFromDirectory:
    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="image directory"):
            manifest_from_directory(tmp_path / "nope", model="resnet18", out_path="o")

    def test_scan_is_sorted_recursive_and_suffix_filtered(self, tmp_path):
        (tmp_path / "sub").mkdir()
        for name in ("b.png", "a.jpg", "sub/c.webp"):
            (tmp_path / name).write_bytes(b"x")
        (tmp_path / "notes.txt").write_bytes(b"x")
        m = manifest_from_directory(tmp_path, model="resnet18", out_path="o")
        assert [ident for ident, _ in m.entries] == ["a", "b", "sub/c"]
        assert all(path.endswith((".jpg", ".png", ".webp")) for _, path in m.entries)

    def test_stem_collision_rejected(self, tmp_path):
        (tmp_path / "a.png").write_bytes(b"x")
        (tmp_path / "a.jpg").write_bytes(b"x")
        with pytest.raises(ValueError, match="rename one"):
            manifest_from_directory(tmp_path, model="resnet18", out_path="o")

    def test_empty_directory_gives_empty_manifest(self, tmp_path):
        m = manifest_from_directory(tmp_path, model="resnet18", out_path="o")
        assert m.entries == []

    def test_policy_is_carried_through(self, tmp_path):
        policy = ResizePolicy(side=300)
        m = manifest_from_directory(tmp_path, model="resnet50", out_path="o", policy=policy)
        assert m.policy == policy
        assert m.model == "resnet50"
