//! The canonical Unpack files and the shipped classifier, embedded.

pub const UNPACK_SCENE: &str = include_str!("../fixtures/unpack.scene");
/// All six grasp directions.
pub const PICKPLACE_DOMAIN: &str = include_str!("../fixtures/pickplace.domain");
/// Top grasps only.
pub const PICKPLACE_TOP_DOMAIN: &str = include_str!("../fixtures/pickplace_top.domain");
pub const UNPACK_PROBLEM: &str = include_str!("../fixtures/unpack.problem");
/// Weights trained from seed 42 on the default dataset.
pub const NFC_MODEL: &[u8] = include_bytes!("../fixtures/nfc.model");
