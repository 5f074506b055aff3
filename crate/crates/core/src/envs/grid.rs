use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ACTION_DOWN, ACTION_LEFT, ACTION_RIGHT, ACTION_UP};
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub const fn new(row: i32, col: i32) -> Self {
        Pos { row, col }
    }

    /// The neighbouring cell in the direction of a movement action, or
    /// `self` for any other action.
    pub fn moved(self, action: usize) -> Pos {
        match action {
            ACTION_UP => Pos::new(self.row - 1, self.col),
            ACTION_DOWN => Pos::new(self.row + 1, self.col),
            ACTION_LEFT => Pos::new(self.row, self.col - 1),
            ACTION_RIGHT => Pos::new(self.row, self.col + 1),
            _ => self,
        }
    }

    pub fn chebyshev(self, other: Pos) -> i32 {
        (self.row - other.row).abs().max((self.col - other.col).abs())
    }

    pub fn manhattan(self, other: Pos) -> i32 {
        (self.row - other.row).abs() + (self.col - other.col).abs()
    }

    pub fn inside(self, height: usize, width: usize) -> bool {
        self.row >= 0 && self.col >= 0 && (self.row as usize) < height && (self.col as usize) < width
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over the generator's seed, stream and word position.
pub fn fingerprint(rng: &ChaCha8Rng) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&rng.get_seed());
    eat(&rng.get_stream().to_le_bytes());
    eat(&rng.get_word_pos().to_le_bytes());
    h
}

/// Binary occupancy image with one channel per object kind.
pub fn render_grid(channels: usize, height: usize, width: usize, cells: &[(usize, Pos)]) -> Tensor {
    let mut data = vec![0.0; channels * height * width];
    for &(ch, p) in cells {
        debug_assert!(ch < channels && p.inside(height, width));
        data[(ch * height + p.row as usize) * width + p.col as usize] = 1.0;
    }
    Tensor::new(vec![channels, height, width], data).expect("grid shape")
}
