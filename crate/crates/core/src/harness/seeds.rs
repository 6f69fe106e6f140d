//! Counter-based seed derivation. Each stream/index pair maps to its own
//! seed, so adding episodes never changes the seeds of earlier ones.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Network initialisation.
    Init,
    /// Exploration, action sampling and replay sampling.
    Agent,
    TrainEpisode,
    EvalEpisode,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1a2b_3c4d_0000_0001,
            Stream::Agent => 0x1a2b_3c4d_0000_0002,
            Stream::TrainEpisode => 0x1a2b_3c4d_0000_0003,
            Stream::EvalEpisode => 0x1a2b_3c4d_0000_0004,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream.tag()).wrapping_add(index))
}
