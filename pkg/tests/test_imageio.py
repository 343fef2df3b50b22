import struct
import tempfile
import unittest
import zlib
import sys
from pathlib import Path

import numpy as np
from PIL import Image

sys.path.append("..")     # to run tests from tests directory directly

from src.imageio import read, write, decode_ppm, encode_ppm, quantize, resize, image_files
from src.imageio import UnsupportedFormatError, MalformedHeaderError, TruncatedImageError
from src.imageio import ImageDecodeError, ImageWriteError, PNG_SIGNATURE
from src.tensor import ShapeError


def png_chunk(kind: bytes, payload: bytes) -> bytes:
    return struct.pack('>I', len(payload)) + kind + payload + struct.pack('>I', zlib.crc32(kind + payload))


class TestPPM(unittest.TestCase):
    def test_decode(self):
        data = b'P6\n# a comment\n2 1\n255\n' + bytes([0, 128, 255, 10, 20, 30])
        image = decode_ppm(data)
        self.assertEqual(image.shape, (1, 2, 3))
        self.assertEqual(image.dtype, np.float32)
        np.testing.assert_allclose(image[0, 0], [0.0, 128 / 255, 1.0])
        np.testing.assert_allclose(image[0, 1], [10 / 255, 20 / 255, 30 / 255])

    def test_encode(self):
        image = np.array([[[0.0, 0.5, 1.0], [0.2, 1.7, -0.3]]])
        data = encode_ppm(image)
        self.assertEqual(data, b'P6\n2 1\n255\n' + bytes([0, 128, 255, 51, 255, 0]))

    def test_bytes_round_trip(self):
        pixels = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        data = b'P6 7 5 255\n' + pixels.tobytes()
        self.assertEqual(encode_ppm(decode_ppm(data))[len(b'P6\n7 5\n255\n'):], pixels.tobytes())

    def test_errors(self):
        self.assertRaises(UnsupportedFormatError, decode_ppm, b'P3\n1 1\n255\n0 0 0')
        self.assertRaises(UnsupportedFormatError, decode_ppm, b'P6\n1 1\n65535\n' + bytes(6))
        self.assertRaises(MalformedHeaderError, decode_ppm, b'P6\n1 x\n255\n' + bytes(3))
        self.assertRaises(MalformedHeaderError, decode_ppm, b'P6\n1 1\n')
        self.assertRaises(MalformedHeaderError, decode_ppm, b'P6\n0 1\n255\n')
        self.assertRaises(MalformedHeaderError, decode_ppm, b'P61 1 255\n' + bytes(3))
        self.assertRaises(TruncatedImageError, decode_ppm, b'P6\n2 2\n255\n' + bytes(11))
        self.assertTrue(issubclass(TruncatedImageError, ImageDecodeError))

    def test_mutated_headers(self):
        rng = np.random.default_rng(9)
        valid = b'P6\n# comment\n4 3\n255\n' + bytes(range(36))
        header_end = valid.index(b'255\n') + 4
        alphabet = b'P6 \n\t#0123456789-+x\xff'
        for _ in range(2000):
            data = bytearray(valid)
            for _ in range(rng.integers(1, 4)):
                position = int(rng.integers(0, header_end + 2))
                action = rng.integers(0, 3)
                if action == 0:
                    data[position] = alphabet[rng.integers(0, len(alphabet))]
                elif action == 1:
                    del data[position]
                else:
                    data.insert(position, alphabet[rng.integers(0, len(alphabet))])
            try:
                image = decode_ppm(bytes(data))
            except ImageDecodeError:
                continue
            self.assertEqual(image.ndim, 3)
            self.assertEqual(image.shape[2], 3)

    def test_quantize(self):
        np.testing.assert_array_equal(quantize(np.array([0.0, 0.5, 0.3 / 255, 2.0, -1.0])),
                                      [0, 128, 0, 255, 0])


class TestFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.image = np.random.default_rng(1).integers(0, 256, size=(6, 5, 3)).astype(np.float32) / 255

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        for name in ('x.ppm', 'x.png'):
            write(self.image, self.root / name)
            np.testing.assert_array_equal(read(self.root / name), self.image)

    def test_format_by_magic(self):
        path = self.root / 'really_png.ppm'
        write(self.image, path, 'png')
        self.assertEqual(read(path).shape, (6, 5, 3))

    def test_png_modes(self):
        Image.new('L', (3, 2), color=51).save(self.root / 'gray.png')
        gray = read(self.root / 'gray.png')
        self.assertEqual(gray.shape, (2, 3, 3))
        np.testing.assert_allclose(gray, 0.2)
        Image.new('RGBA', (2, 2), color=(255, 0, 0, 10)).save(self.root / 'alpha.png')
        np.testing.assert_allclose(read(self.root / 'alpha.png')[0, 0], [1.0, 0.0, 0.0])

    def test_bad_files(self):
        (self.root / 'a.jpg').write_bytes(b'\xff\xd8\xff\xe0garbage')
        self.assertRaises(UnsupportedFormatError, read, self.root / 'a.jpg')
        write(self.image, self.root / 'cut.png')
        data = (self.root / 'cut.png').read_bytes()
        (self.root / 'cut.png').write_bytes(data[:len(data) // 2])
        self.assertRaises(ImageDecodeError, read, self.root / 'cut.png')
        self.assertRaises(FileNotFoundError, read, self.root / 'missing.png')

        header = struct.pack('>IIBBBBB', 30000, 30000, 8, 2, 0, 0, 0)
        huge = PNG_SIGNATURE + png_chunk(b'IHDR', header) + png_chunk(b'IDAT', b'') + png_chunk(b'IEND', b'')
        (self.root / 'huge.png').write_bytes(huge)
        with self.assertRaises(MalformedHeaderError) as context:
            read(self.root / 'huge.png')
        self.assertIn('huge.png', str(context.exception))

    def test_read_write_read_is_stable(self):
        smooth = np.random.default_rng(2).uniform(size=(6, 5, 3))
        for name in ('x.ppm', 'x.png'):
            write(smooth, self.root / name)
            once = read(self.root / name)
            write(once, self.root / f'again_{name}')
            np.testing.assert_array_equal(read(self.root / f'again_{name}'), once)

    def test_write_errors(self):
        self.assertRaises(UnsupportedFormatError, write, self.image, self.root / 'x.bmp')
        self.assertRaises(ShapeError, write, self.image[..., :2], self.root / 'x.png')
        self.assertRaises(ImageWriteError, write, self.image, self.root / 'no' / 'dir' / 'x.ppm')

    def test_image_files(self):
        for name in ('b.png', 'a.ppm', 'notes.txt'):
            (self.root / name).write_bytes(b'')
        self.assertEqual([p.name for p in image_files(self.root)], ['a.ppm', 'b.png'])


class TestResize(unittest.TestCase):
    def test_corner_aligned(self):
        row = np.array([[[0.0], [1.0]]])
        wide = resize(row, 1, 4)
        np.testing.assert_allclose(wide[0, :, 0], [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-12)

    def test_identity_and_shapes(self):
        image = np.random.default_rng(0).uniform(size=(7, 9, 3))
        same = resize(image, 7, 9)
        np.testing.assert_array_equal(same, image)
        self.assertIsNot(same, image)
        self.assertEqual(resize(image, 16, 12).shape, (16, 12, 3))
        self.assertEqual(resize(image, 3, 5).shape, (3, 5, 3))
        constant = np.full((5, 5, 3), 0.3)
        np.testing.assert_allclose(resize(constant, 8, 8), 0.3)

    def test_value_range_kept(self):
        rng = np.random.default_rng(4)
        for height, width in ((3, 11), (17, 6), (2, 2), (32, 5)):
            image = rng.uniform(-0.5, 2.0, size=(9, 7, 3))
            out = resize(image, height, width)
            self.assertGreaterEqual(out.min(), image.min() - 1e-12)
            self.assertLessEqual(out.max(), image.max() + 1e-12)


if __name__ == '__main__':
    unittest.main()
