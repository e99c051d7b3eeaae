//! Shared 5x5 grid helpers for the stag-hunt games.

use rand::seq::IndexedRandom;
use rand::Rng;

pub const GRID: i32 = 5;

pub type Cell = (i32, i32);

/// Action indices shared by every environment: up, down, left, right, stay.
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const N_ACTIONS: usize = 5;

pub fn delta(action: usize) -> (i32, i32) {
    match action {
        UP => (0, 1),
        DOWN => (0, -1),
        LEFT => (-1, 0),
        RIGHT => (1, 0),
        _ => (0, 0),
    }
}

pub fn apply_move(cell: Cell, action: usize) -> Cell {
    let (dx, dy) = delta(action);
    ((cell.0 + dx).clamp(0, GRID - 1), (cell.1 + dy).clamp(0, GRID - 1))
}

pub fn manhattan(a: Cell, b: Cell) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Uniformly random cell not in `occupied`.
pub fn free_cell<R: Rng + ?Sized>(rng: &mut R, occupied: &[Cell]) -> Cell {
    let free: Vec<Cell> = (0..GRID)
        .flat_map(|x| (0..GRID).map(move |y| (x, y)))
        .filter(|c| !occupied.contains(c))
        .collect();
    *free.choose(rng).expect("grid has a free cell")
}

/// In-bounds 4-neighbours of `cell`.
pub fn neighbours(cell: Cell) -> Vec<Cell> {
    [UP, DOWN, LEFT, RIGHT]
        .iter()
        .map(|a| {
            let (dx, dy) = delta(*a);
            (cell.0 + dx, cell.1 + dy)
        })
        .filter(|c| (0..GRID).contains(&c.0) && (0..GRID).contains(&c.1))
        .collect()
}

pub fn is_corner(c: Cell) -> bool {
    (c.0 == 0 || c.0 == GRID - 1) && (c.1 == 0 || c.1 == GRID - 1)
}

pub fn is_edge(c: Cell) -> bool {
    !is_corner(c) && (c.0 == 0 || c.0 == GRID - 1 || c.1 == 0 || c.1 == GRID - 1)
}

pub fn rel(from: Cell, to: Cell) -> [f64; 2] {
    [(to.0 - from.0) as f64, (to.1 - from.1) as f64]
}

/// Greedy one-step move from `from` toward `to` (x first, then y); stays when equal.
pub fn step_toward(from: Cell, to: Cell) -> usize {
    if to.0 > from.0 {
        RIGHT
    } else if to.0 < from.0 {
        LEFT
    } else if to.1 > from.1 {
        UP
    } else if to.1 < from.1 {
        DOWN
    } else {
        STAY
    }
}
