//! Ray-bundle neural implicit surface reconstruction.

pub mod autodiff;
pub mod fields;
pub mod geometry;
pub mod losses;
pub mod math;
pub mod render;
pub mod raster;
pub mod scene;
pub mod trainer;
pub mod scalar;

pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Vec3 = math::Vec3<f64>;
pub type Camera = geometry::Camera<f64>;
pub type Ray = geometry::Ray<f64>;
pub type RayBundle = geometry::RayBundle<f64>;
pub type FieldParams = fields::FieldParams<f64>;
pub type AnalyticShape = fields::AnalyticShape<f64>;
pub type RgbImage = raster::RgbImage<f64>;
