import numpy as np
import pytest
from PIL import Image
from pydantic import ValidationError

from src.geometry.holes import DomainSpec, HoleShape
from src.geometry.masks import (
    SolidMask,
    build_cell_mask,
    build_perforated_mask,
    collar_is_fluid,
    count_holes,
    export_mask_pgm,
    porosity,
)
from src.grid.fields import GridSpec
from src.utils.errors import ConfigurationError, StructuralError

# an 8x8 staircase disk of radius 1/4 keeps the 12 cells whose centers are inside
DISK_SOLID_CELLS = 12


def test_hole_area_and_extents():
    assert HoleShape(kind="square", radius=0.2).area() == pytest.approx(0.16)
    ellipse = HoleShape(kind="ellipse", semi_axes=(0.3, 0.1))
    assert ellipse.half_extents() == (0.3, 0.1)
    assert ellipse.area() == pytest.approx(np.pi * 0.03)


def test_ellipse_needs_semi_axes():
    with pytest.raises(ValidationError):
        HoleShape(kind="ellipse")


@pytest.mark.parametrize(
    "hole",
    [
        HoleShape(kind="disk", radius=0.5),
        HoleShape(kind="disk", radius=0.3, center=(0.25, 0.0)),
        HoleShape(kind="ellipse", semi_axes=(0.2, 0.55)),
    ],
)
def test_hole_touching_the_cell_edge_is_rejected(hole):
    with pytest.raises(ConfigurationError):
        hole.check_containment()


def test_degenerate_hole_contains_nothing():
    hole = HoleShape(kind="disk", radius=0.0)
    assert not hole.contains(np.zeros(3), np.zeros(3)).any()


def test_domain_requires_integer_cell_count():
    spec = DomainSpec(epsilon=0.3, cells_per_eps=8)
    with pytest.raises(ConfigurationError):
        spec.eps_cells()


def test_domain_requires_even_resolution():
    with pytest.raises(ValidationError):
        DomainSpec(epsilon=0.25, cells_per_eps=9)


def test_domain_grid(small_domain):
    grid = small_domain.grid()
    assert (grid.nx, grid.ny) == (32, 32)
    assert grid.hx == pytest.approx(small_domain.h)
    assert small_domain.interior_cells() == (range(1, 4), range(1, 4))
    assert small_domain.with_epsilon(0.125).grid().nx == 64


def test_cell_mask_porosity(disk):
    mask = build_cell_mask(disk, 8)
    assert mask.n_solid() == DISK_SOLID_CELLS
    assert porosity(mask) == pytest.approx(1 - DISK_SOLID_CELLS / 64)
    assert mask.grid.periodic_x and mask.grid.periodic_y


def test_cell_mask_is_symmetric_for_centered_disk(disk):
    solid = build_cell_mask(disk, 16).solid
    assert np.array_equal(solid, solid.T)
    assert np.array_equal(solid, solid[::-1])


def test_perforated_mask_stamps_interior_cells(small_domain):
    mask = build_perforated_mask(small_domain)
    assert count_holes(mask, small_domain) == 9
    assert mask.n_solid() == 9 * DISK_SOLID_CELLS
    assert collar_is_fluid(mask, small_domain)
    cell = build_cell_mask(small_domain.hole, 8).solid
    # epsilon-cell (1, 1) covers global cells 4..11
    assert np.array_equal(mask.solid[4:12, 4:12], cell)


def test_perforated_mask_hole_count_scales(disk):
    for eps, expected in [(0.5, 1), (0.25, 9), (0.125, 49)]:
        spec = DomainSpec(epsilon=eps, cells_per_eps=8, hole=disk)
        assert count_holes(build_perforated_mask(spec), spec) == expected


def test_off_center_hole_is_stamped():
    spec = DomainSpec(epsilon=0.5, cells_per_eps=8, hole=HoleShape(kind="square", radius=0.125, center=(0.125, 0.0)))
    mask = build_perforated_mask(spec)
    assert count_holes(mask, spec) == 1
    assert mask.n_solid() == 4


def test_mask_shape_mismatch(square_grid):
    with pytest.raises(StructuralError):
        SolidMask(square_grid, np.zeros((3, 3)))


def test_pinned_faces_include_walls_and_solid(square_grid):
    solid = np.zeros(square_grid.center_shape, dtype=bool)
    solid[5, 5] = True
    mask = SolidMask(square_grid, solid)
    pu = mask.pinned_u()
    assert pu[0].all() and pu[-1].all()
    assert pu[5, 5] and pu[6, 5] and not pu[7, 5]
    free = mask.free_faces()
    on_solid = mask.solid_faces()
    assert not (free & on_solid).any()
    assert on_solid.sum() == 4


def test_mask_equality_and_hash(disk):
    a = build_cell_mask(disk, 8)
    b = build_cell_mask(disk, 8)
    assert a == b
    assert hash(a) == hash(b)
    assert a != build_cell_mask(disk, 16)


def test_binary_pgm_export(tmp_path, small_domain):
    mask = build_perforated_mask(small_domain)
    path = export_mask_pgm(mask, tmp_path / "mask.pgm")
    assert path.read_bytes().startswith(b"P5")
    pixels = np.asarray(Image.open(path))
    assert pixels.shape == (32, 32)
    assert np.count_nonzero(pixels == 0) == mask.n_solid()


def test_plain_pgm_export_orientation(tmp_path):
    grid = GridSpec(nx=4, ny=4, lx=1.0, ly=1.0)
    solid = np.zeros((4, 4), dtype=bool)
    solid[0, 3] = True  # left column, top row
    path = export_mask_pgm(SolidMask(grid, solid), tmp_path / "mask.pgm", binary=False)
    lines = path.read_text().splitlines()
    assert lines[:3] == ["P2", "4 4", "255"]
    assert lines[3].split() == ["0", "255", "255", "255"]


def test_scaled_hole_keeps_center_and_kind():
    ellipse = HoleShape(kind="ellipse", semi_axes=(0.2, 0.1), center=(0.1, 0.0))
    bigger = ellipse.scaled(1.5)
    assert bigger.semi_axes == pytest.approx((0.3, 0.15))
    assert bigger.center == ellipse.center
    assert HoleShape(kind="square", radius=0.2).scaled(0.5).radius == pytest.approx(0.1)


def test_max_scale_reaches_the_cell_edge():
    assert HoleShape(kind="disk", radius=0.25).max_scale() == pytest.approx(2.0)
    assert HoleShape(kind="disk", radius=0.2, center=(0.1, 0.0)).max_scale() == pytest.approx(2.0)
    assert HoleShape(kind="ellipse", semi_axes=(0.4, 0.1)).max_scale() == pytest.approx(1.25)
    assert HoleShape(kind="disk", radius=0.0).max_scale() == float("inf")


@pytest.mark.parametrize("n", [8, 16, 32, 64])
def test_aligned_square_hole_has_exact_porosity(n):
    # half-width 1/4 falls on a grid line whenever 4 divides n
    mask = build_cell_mask(HoleShape(kind="square", radius=0.25), n)
    assert mask.n_solid() == (n // 2) ** 2
    assert porosity(mask) == 0.75


def test_epsilon_one_leaves_the_rectangle_unperforated(disk):
    spec = DomainSpec(epsilon=1.0, cells_per_eps=8, hole=disk)
    mask = build_perforated_mask(spec)
    assert count_holes(mask, spec) == 0
    assert mask.n_solid() == 0
    assert porosity(mask) == 1.0


@pytest.mark.parametrize(
    "spec",
    [
        DomainSpec(epsilon=0.25, cells_per_eps=8, hole=HoleShape(kind="disk", radius=0.25)),
        DomainSpec(lx=1.5, epsilon=0.25, cells_per_eps=16,
                   hole=HoleShape(kind="ellipse", semi_axes=(0.3, 0.15), center=(0.05, -0.1))),
    ],
    ids=["disk", "off_center_ellipse"],
)
def test_every_interior_cell_is_a_translate_of_the_cell_mask(spec):
    mask = build_perforated_mask(spec)
    cpe = spec.cells_per_eps
    half = cpe // 2
    local = build_cell_mask(spec.hole, cpe).solid
    kx_range, ky_range = spec.interior_cells()
    for kx in kx_range:
        for ky in ky_range:
            block = mask.solid[cpe * kx - half:cpe * kx + half, cpe * ky - half:cpe * ky + half]
            assert np.array_equal(block, local), (kx, ky)
    assert mask.n_solid() == len(kx_range) * len(ky_range) * int(local.sum())
