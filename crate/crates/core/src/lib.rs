#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod collision;
pub mod fem;
pub mod geometry;
pub mod haptics;
pub mod material;
pub mod mesh;
pub mod session;
pub mod wetting;

pub type Vec3 = nalgebra::Vector3<f64>;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/materials.md")]
    mod materials {}
    #[doc = include_str!("../../../book/src/wetting.md")]
    mod wetting {}
    #[doc = include_str!("../../../book/src/fem.md")]
    mod fem {}
    #[doc = include_str!("../../../book/src/collision.md")]
    mod collision {}
    #[doc = include_str!("../../../book/src/haptics.md")]
    mod haptics {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
