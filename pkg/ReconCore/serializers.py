"""
Schemas of the JSON documents the toolkit writes: array sidecars, dataset
manifests, series manifests and checkpoint headers.

Every document is validated on read and on write, so a malformed or partial
file is reported as a ``DataError`` before any array is touched.
"""

from pathlib import Path

from rest_framework import serializers

ARRAY_DTYPES = ['<c16', '<f8', '<f4', '<i8']
SPLITS = ['train', 'val', 'test']


class ArraySidecarSerializer(serializers.Serializer):
    """
    Sidecar of a raw little-endian array file.

    Attributes:
        dtype (str): numpy dtype string of the payload.
        shape (list): Array shape, row-major.
        meta (dict): Free-form description (trajectory geometry, map recipe, ...).
    """
    dtype = serializers.ChoiceField(choices=ARRAY_DTYPES)
    shape = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=True)
    meta = serializers.DictField(required=False, default=dict)


class TrajectoryMetaSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=['radial', 'cartesian'])
    n_spokes = serializers.IntegerField(min_value=1)
    points_per_spoke = serializers.IntegerField(min_value=2)
    start_index = serializers.IntegerField(min_value=0)


class MapsMetaSerializer(serializers.Serializer):
    n_coils = serializers.IntegerField(min_value=1)
    side = serializers.IntegerField(min_value=2)
    seed = serializers.IntegerField(allow_null=True)
    recipe_version = serializers.IntegerField(min_value=1)


class DatasetConfigSerializer(serializers.Serializer):
    """
    Generation settings of a dataset, as given on the command line.

    Validates the ranges so that a bad invocation fails before any work is done.
    """
    side = serializers.IntegerField(min_value=8)
    train_count = serializers.IntegerField(min_value=0)
    val_count = serializers.IntegerField(min_value=0)
    test_count = serializers.IntegerField(min_value=0)
    spokes_min = serializers.IntegerField(min_value=1)
    spokes_max = serializers.IntegerField(min_value=1)
    coils_min = serializers.IntegerField(min_value=1)
    coils_max = serializers.IntegerField(min_value=1)
    test_spokes = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_empty=True)
    percentile = serializers.FloatField(min_value=0, max_value=50)
    n_ellipses = serializers.IntegerField(min_value=1)
    oversampling = serializers.FloatField(min_value=1.25)
    kernel_width = serializers.IntegerField(min_value=2)
    dc_iters = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0)

    def validate(self, data):
        if data['side'] % 2:
            raise serializers.ValidationError("side must be even.")
        if data['percentile'] <= 0:
            raise serializers.ValidationError("percentile must lie in (0, 50].")
        if data['spokes_min'] > data['spokes_max']:
            raise serializers.ValidationError("spokes_min cannot exceed spokes_max.")
        if data['coils_min'] > data['coils_max']:
            raise serializers.ValidationError("coils_min cannot exceed coils_max.")
        if data['train_count'] + data['val_count'] + data['test_count'] == 0:
            raise serializers.ValidationError("The dataset must contain at least one item.")
        if data['test_count'] and not data['test_spokes']:
            raise serializers.ValidationError("A test split needs a spoke grid.")
        return data


class InverseProblemRecordSerializer(serializers.Serializer):
    """One simulated inverse problem and the files that hold it."""
    id = serializers.CharField(max_length=64)
    split = serializers.ChoiceField(choices=SPLITS)
    seed = serializers.IntegerField(min_value=0)
    side = serializers.IntegerField(min_value=2)
    n_spokes = serializers.IntegerField(min_value=1)
    n_coils = serializers.IntegerField(min_value=1)
    af = serializers.FloatField(min_value=0)
    sigma = serializers.FloatField(min_value=0, max_value=1)
    dr = serializers.FloatField(min_value=1)
    kappa = serializers.FloatField(min_value=0)
    tau = serializers.ListField(child=serializers.FloatField(min_value=0))
    norm_once = serializers.ListField(child=serializers.FloatField(min_value=0))
    norm_twice = serializers.ListField(child=serializers.FloatField(min_value=0))
    files = serializers.DictField(child=serializers.CharField())
    oversampling = serializers.FloatField(min_value=1.25, required=False)
    kernel_width = serializers.IntegerField(min_value=2, required=False)

    def validate(self, data):
        for key in ('tau', 'norm_once', 'norm_twice'):
            if len(data[key]) != data['n_coils']:
                raise serializers.ValidationError(f"{key} must have one entry per coil.")
        root = self.context.get('root')
        if root is not None:
            missing = [name for name in data['files'].values() if not (Path(root) / name).exists()]
            if missing:
                raise serializers.ValidationError(f"Referenced files do not exist: {missing}")
        return data


class DatasetManifestSerializer(serializers.Serializer):
    version = serializers.IntegerField(min_value=1)
    rng = serializers.CharField()
    master_seed = serializers.IntegerField(min_value=0)
    config = DatasetConfigSerializer()
    items = InverseProblemRecordSerializer(many=True)
    provenance = serializers.DictField(required=False, default=dict)

    def validate_items(self, items):
        ids = [item['id'] for item in items]
        if len(ids) != len(set(ids)):
            raise serializers.ValidationError("Duplicate item ids in the manifest.")
        if not items:
            raise serializers.ValidationError("The manifest lists no items.")
        return items


class ArchitectureSerializer(serializers.Serializer):
    """Hyper-parameters that fix the shapes of a network module."""
    arch = serializers.ChoiceField(choices=['unet', 'uwdsr'])
    in_channels = serializers.IntegerField(min_value=1)
    out_channels = serializers.IntegerField(min_value=1)
    base_channels = serializers.IntegerField(min_value=1)
    depth = serializers.IntegerField(min_value=1)
    n_blocks = serializers.IntegerField(min_value=1)
    expansion = serializers.IntegerField(min_value=1)
    low_rank = serializers.FloatField(min_value=0, max_value=1)


class CheckpointHeaderSerializer(serializers.Serializer):
    format_version = serializers.IntegerField(min_value=1)
    architecture = ArchitectureSerializer()
    precision = serializers.ChoiceField(choices=['float32', 'float64'])
    receptive_field = serializers.IntegerField(min_value=1)
    tensors = serializers.ListField(child=serializers.CharField())


class StageRecordSerializer(serializers.Serializer):
    stage = serializers.IntegerField(min_value=1)
    checkpoint = serializers.CharField()
    epochs = serializers.IntegerField(min_value=0)
    train_loss = serializers.FloatField(allow_null=True)
    val_psnr = serializers.FloatField(allow_null=True)
    val_ssim = serializers.FloatField(allow_null=True)
    val_rdr = serializers.FloatField(allow_null=True)


class SeriesManifestSerializer(serializers.Serializer):
    """A trained series: architecture, one checkpoint per stage, provenance."""
    version = serializers.IntegerField(min_value=1)
    architecture = ArchitectureSerializer()
    residual_mode = serializers.ChoiceField(choices=['magnitude', 'complex'])
    normalization = serializers.CharField()
    dataset_hash = serializers.CharField(allow_blank=True)
    seed = serializers.IntegerField(min_value=0)
    stopped_early = serializers.BooleanField(default=False)
    stages = StageRecordSerializer(many=True)
    provenance = serializers.DictField(required=False, default=dict)

    def validate_stages(self, stages):
        if [s['stage'] for s in stages] != list(range(1, len(stages) + 1)):
            raise serializers.ValidationError("Stages must be numbered 1..I without gaps.")
        return stages
