import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from ReconCore.coil import synth_sensitivities
from ReconCore.exceptions import DataError
from ReconCore.storage import (
    canonical_hash, file_hash, load_maps, load_trajectory, provenance, read_array, read_json, read_pgm,
    save_maps, save_trajectory, sidecar_path, write_array, write_json, write_pgm,
)
from ReconCore.serializers import ArraySidecarSerializer
from ReconCore.trajectory import golden_angle_radial


class StorageTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()


class ArrayFileTests(StorageTestCase):

    def test_complex_roundtrip_with_meta(self):
        array = np.random.default_rng(0).standard_normal((3, 5)) * (1 + 2j)
        path = write_array(self.root / 'a.c16', array, '<c16', meta={'note': 'x'})
        loaded, meta = read_array(path, with_meta=True)
        self.assertEqual(loaded.tobytes(), array.tobytes())
        self.assertEqual(meta, {'note': 'x'})
        self.assertEqual(path.stat().st_size, 15 * 16)

    def test_size_mismatch(self):
        path = write_array(self.root / 'a.f8', np.zeros(4), '<f8')
        path.write_bytes(b'\0' * 24)
        with self.assertRaises(DataError):
            read_array(path)

    def test_missing_payload_or_sidecar(self):
        path = write_array(self.root / 'a.f8', np.zeros(4), '<f8')
        sidecar_path(path).unlink()
        with self.assertRaises(DataError):
            read_array(path)
        with self.assertRaises(DataError):
            read_array(self.root / 'absent.f8')

    def test_bad_sidecar(self):
        path = self.root / 'a.f8'
        np.zeros(2).tofile(path)
        sidecar_path(path).write_text(json.dumps({'dtype': '<i2', 'shape': [2]}))
        with self.assertRaises(DataError):
            read_array(path)


class JsonDocumentTests(StorageTestCase):

    def test_validated_roundtrip(self):
        payload = write_json(self.root / 'doc.json', {'dtype': '<f8', 'shape': [2, 3]}, ArraySidecarSerializer)
        self.assertEqual(payload['meta'], {})
        self.assertEqual(read_json(self.root / 'doc.json', ArraySidecarSerializer), payload)

    def test_invalid_json(self):
        (self.root / 'doc.json').write_text('{not json')
        with self.assertRaises(DataError):
            read_json(self.root / 'doc.json')

    def test_invalid_document(self):
        with self.assertRaises(DataError):
            write_json(self.root / 'doc.json', {'dtype': '<f8', 'shape': [-1]}, ArraySidecarSerializer)
        self.assertFalse((self.root / 'doc.json').exists())


class GeometryFileTests(StorageTestCase):

    def test_trajectory_roundtrip(self):
        traj = golden_angle_radial(5, 16, start_index=2)
        loaded = load_trajectory(save_trajectory(self.root / 'traj.f8', traj))
        self.assertEqual(loaded.points.tobytes(), traj.points.tobytes())
        self.assertEqual((loaded.n_spokes, loaded.start_index, loaded.kind), (5, 2, 'radial'))

    def test_maps_roundtrip(self):
        maps = synth_sensitivities(3, 16, seed=9)
        loaded = load_maps(save_maps(self.root / 'maps.c16', maps))
        self.assertEqual(loaded.maps.tobytes(), maps.maps.tobytes())
        self.assertEqual(loaded.seed, 9)


class PgmTests(StorageTestCase):

    def test_quantization_error(self):
        image = np.random.default_rng(4).random((6, 9))
        peak = write_pgm(self.root / 'x.pgm', image)
        self.assertEqual(peak, image.max())
        back = read_pgm(self.root / 'x.pgm')
        self.assertEqual(back.shape, (6, 9))
        self.assertLessEqual(np.max(np.abs(back - image / peak)), 1 / 65535)

    def test_header(self):
        write_pgm(self.root / 'x.pgm', np.ones((2, 3)))
        self.assertTrue((self.root / 'x.pgm').read_bytes().startswith(b'P5\n3 2\n65535\n'))

    def test_zero_image(self):
        self.assertEqual(write_pgm(self.root / 'z.pgm', np.zeros((4, 4))), 0.0)
        self.assertFalse(np.any(read_pgm(self.root / 'z.pgm')))

    def test_rejects_other_formats(self):
        (self.root / 'p2.pgm').write_bytes(b'P2\n1 1\n255\n0\n')
        with self.assertRaises(DataError):
            read_pgm(self.root / 'p2.pgm')


class HashTests(StorageTestCase):

    def test_canonical_hash_ignores_key_order(self):
        self.assertEqual(canonical_hash({'a': 1, 'b': [1, 2]}), canonical_hash({'b': [1, 2], 'a': 1}))
        self.assertNotEqual(canonical_hash({'a': 1}), canonical_hash({'a': 2}))

    def test_file_hash(self):
        path = self.root / 'f'
        path.write_bytes(b'abc')
        self.assertEqual(file_hash(path), 'ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad')

    def test_provenance_record(self):
        record = provenance({'x': 1}, seeds={'noise': 3}, command='gen_data')
        self.assertEqual(record['config_hash'], canonical_hash({'x': 1}))
        self.assertEqual(record['seeds'], {'noise': 3})
        self.assertEqual(record['rng'], 'numpy.random.PCG64')
        self.assertTrue(record['version'])
