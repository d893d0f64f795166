import numpy as np
import pytest

import equiterm as eq
from equiterm.errors import GridError


def test_single_delivery_two_times_layout():
    # one delivery over two trading times, one fuel, one plant
    grid = eq.TradingGrid((1.0,), ((0.5, 1.0),))
    im = eq.canonical_index(grid, ("gas",), (1,))
    assert [im.v_index(0, i) for i in range(2)] == [0, 1]
    assert [im.f_index(0, i, "gas") for i in range(2)] == [2, 3]
    assert [im.o_index(0, i) for i in range(2)] == [4, 5]
    assert im.w_index(0, "gas", 0) == 6
    assert im.total == 7


def test_two_deliveries_price_order():
    grid = eq.TradingGrid((1.0, 2.0), ((1.0,), (2.0,)))
    im = eq.canonical_index(grid)
    assert grid.n_contracts == 2
    assert grid.node_labels() == ((0, 0), (1, 0))
    assert im.v_index(0, 0) == 0 and im.v_index(1, 0) == 1


def test_plant_order_is_canonical():
    plants = [
        eq.PowerPlant("gas", 5.0, 5.0, -5.0, 2.5, name="b"),
        eq.PowerPlant("gas", 5.0, 5.0, -5.0, 1.5, name="a"),
    ]
    p1 = eq.Producer(1.0, tuple(plants))
    p2 = eq.Producer(1.0, tuple(reversed(plants)))
    g1 = p1.plants_by_fuel(("gas",))
    g2 = p2.plants_by_fuel(("gas",))
    assert g1 == g2
    assert [pl.efficiency for pl in g1["gas"]] == [1.5, 2.5]


def test_index_map_is_a_bijection():
    grid = eq.TradingGrid((1.0, 2.0, 3.0), ((0.5, 1.0), (2.0,), (2.5, 2.8, 3.0)))
    im = eq.canonical_index(grid, ("coal", "gas"), (2, 1))
    for k in range(im.total):
        assert im.index_of(im.tuple_of(k)) == k


def test_grid_invariants():
    with pytest.raises(GridError):
        eq.TradingGrid((1.0,), ((0.5, 0.9),))  # last trading != delivery
    with pytest.raises(GridError):
        eq.TradingGrid((2.0, 1.0), ((2.0,), (1.0,)))  # decreasing deliveries
    with pytest.raises(GridError):
        eq.TradingGrid((1.0,), ((1.0, 0.5),))  # unordered trading times
    with pytest.raises(GridError):
        eq.TradingGrid((1.0,), ((),))  # empty trading list


def test_discounts():
    grid = eq.TradingGrid((1.0, 2.0), ((1.0,), (1.5, 2.0)), interest_rate=0.1)
    d = grid.node_discounts()
    assert d == pytest.approx([np.exp(-0.1), np.exp(-0.2), np.exp(-0.2)])
    im = eq.canonical_index(grid, ("gas",))
    pd = im.price_discounts()
    assert pd.shape == (3 * 3,)
    assert pd[:3] == pytest.approx(d)


def test_delivery_totals_matrix():
    grid = eq.TradingGrid((1.0, 2.0), ((0.5, 1.0), (2.0,)))
    a1 = eq.delivery_totals_matrix(grid)
    np.testing.assert_array_equal(a1, [[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
