//! Pinhole camera model, point-cloud rasterization and bbox grounding.

mod bbox;
mod camera;
pub mod io;
mod raster;

pub use bbox::{
    backproject_bbox_center, estimate_root_depth, project_root, propagate_and_project,
    static_bbox_track, BBox, PlacementTrack, ProjectedRoot, RootTrajectory, TokenGrid,
    BODY_OCCUPANCY,
};
pub use camera::{yaw_rotation, CameraIntrinsics, CameraPose, Mat3, Vec3, Z_NEAR};
pub use raster::{project_point_cloud, ColoredPoint, PointCloud, RgbdFrame, BACKGROUND_GRAY};
