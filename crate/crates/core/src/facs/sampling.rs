use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Bins continuous intensities in `[lo, hi]` into `levels` integer levels,
/// rounding half up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantizer {
    pub lo: f64,
    pub hi: f64,
    pub levels: usize,
}

impl Quantizer {
    /// Six levels over the 0..5 intensity scale.
    pub const AU: Quantizer = Quantizer { lo: 0.0, hi: 5.0, levels: 6 };

    pub fn level(&self, v: f64) -> usize {
        let top = (self.levels - 1) as f64;
        let scaled = (v - self.lo) / (self.hi - self.lo) * top;
        (scaled + 0.5).floor().clamp(0.0, top) as usize
    }
}

/// Frames sharing one quantized level of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AuBlock {
    pub channel: usize,
    pub level: usize,
    pub members: Vec<usize>,
}

/// Non-empty blocks for every (channel, level) pair, in channel-major order.
pub fn build_blocks(tracks: &[Vec<f64>], quantizer: Quantizer) -> Vec<AuBlock> {
    let channels = tracks.first().map_or(0, Vec::len);
    let mut blocks = Vec::new();
    for channel in 0..channels {
        let mut by_level = vec![Vec::new(); quantizer.levels];
        for (f, row) in tracks.iter().enumerate() {
            by_level[quantizer.level(row[channel])].push(f);
        }
        for (level, members) in by_level.into_iter().enumerate() {
            if !members.is_empty() {
                blocks.push(AuBlock { channel, level, members });
            }
        }
    }
    blocks
}

/// Selects `budget` frames so rare (channel, level) blocks are represented.
///
/// Blocks are visited smallest first; each visit takes the next not yet
/// selected frame from the block's seeded shuffle, and passes repeat until
/// the budget is met. Every block is therefore served once before any block
/// is served twice, and the selection for budget `b` is a prefix of the
/// selection for `b + 1`. Returns sorted frame indices.
pub fn balanced_sample(tracks: &[Vec<f64>], budget: usize, quantizer: Quantizer, seed: u64) -> Vec<usize> {
    assert!(quantizer.levels >= 2, "need at least two intensity levels");
    let n = tracks.len();
    if budget >= n {
        if budget > n {
            warn!("budget {budget} exceeds the {n} available frames; keeping all of them");
        }
        return (0..n).collect();
    }
    let mut blocks = build_blocks(tracks, quantizer);
    blocks.sort_by_key(|b| (b.members.len(), b.channel, b.level));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut blocks {
        b.members.shuffle(&mut rng);
    }
    let mut cursor = vec![0; blocks.len()];
    let mut taken = vec![false; n];
    let mut picked = Vec::with_capacity(budget);
    while picked.len() < budget {
        let before = picked.len();
        for (b, block) in blocks.iter().enumerate() {
            if picked.len() == budget {
                break;
            }
            while cursor[b] < block.members.len() && taken[block.members[cursor[b]]] {
                cursor[b] += 1;
            }
            if let Some(&f) = block.members.get(cursor[b]) {
                taken[f] = true;
                picked.push(f);
            }
        }
        if picked.len() == before {
            break;
        }
    }
    picked.sort_unstable();
    picked
}

/// Evenly spaced temporal subsample.
pub fn uniform_sample(frame_count: usize, budget: usize) -> Vec<usize> {
    let budget = budget.min(frame_count);
    (0..budget).map(|i| i * frame_count / budget).collect()
}

/// Max over min of selected-frame counts across the blocks that are non-empty
/// in the full data; an unrepresented block scores the max count itself.
pub fn block_imbalance(tracks: &[Vec<f64>], selected: &[usize], quantizer: Quantizer) -> f64 {
    let blocks = build_blocks(tracks, quantizer);
    let mut chosen = vec![false; tracks.len()];
    for &f in selected {
        chosen[f] = true;
    }
    let counts: Vec<usize> = blocks
        .iter()
        .map(|b| b.members.iter().filter(|&&f| chosen[f]).count())
        .collect();
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let min = counts.iter().copied().min().unwrap_or(0) as f64;
    if min == 0.0 {
        max
    } else {
        max / min
    }
}
