use thiserror::Error;

/// Errors raised while building, loading or evaluating a head model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("file truncated inside chunk `{0}`")]
    Truncated(String),
    #[error("missing chunk `{0}`")]
    MissingChunk(String),
    #[error("chunk `{name}` has shape {found:?}, expected {expected}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: String },
    #[error("chunk `{name}` has element type {found:?}, expected {expected}")]
    DTypeMismatch { name: String, found: crate::real::ElementType, expected: String },
    #[error("index out of range in `{what}`: {index} >= {bound}")]
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    #[error("non-manifold mesh: edge ({0}, {1}) shared by {2} faces")]
    NonManifold(u32, u32, usize),
    #[error("skin weights of vertex {vertex} sum to {sum}")]
    SkinWeights { vertex: usize, sum: f64 },
    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),
    #[error("joint {joint} has parent {parent}; parents must precede children")]
    JointOrder { joint: usize, parent: i64 },
    #[error("{what}: expected length {expected}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Low-level failures of the chunked tensor container.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("file truncated inside chunk `{0}`")]
    Truncated(String),
    #[error("unknown element type tag {0}")]
    ElementTag(u8),
    #[error("duplicate chunk `{0}`")]
    Duplicate(String),
    #[error("chunk name is not valid UTF-8")]
    Name,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum RemeshError {
    #[error("non-manifold mesh: edge ({0}, {1}) shared by {2} faces")]
    NonManifold(u32, u32, usize),
    #[error("overlapping UV triangles: {0:?}")]
    OverlappingUv(Vec<(u32, u32)>),
    #[error("UV coordinate {0} lies outside [0,1]²")]
    UvOutOfRange(usize),
    #[error("remesh resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate triangle (area {0:e})")]
    DegenerateTriangle(f64),
    #[error("cloud references face {face} but mesh has {faces} faces")]
    FaceOutOfRange { face: usize, faces: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("backward pass called without a matching forward pass: {0}")]
    NoForward(&'static str),
    #[error("gradient image size mismatch: expected {expected}, got {got}")]
    Size { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize, usize), (usize, usize, usize)),
    #[error("image {0}×{1} is smaller than the {2}×{2} window")]
    TooSmall(usize, usize, usize),
    #[error("non-finite value at coordinate {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("iteration {iteration} outside [0, {total}]")]
    OutOfRange { iteration: usize, total: usize },
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("every priority × size product is zero")]
    AllZero,
    #[error("negative or non-finite entry at dataset {0}")]
    Invalid(usize),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing {modality} for view {view} frame {frame}")]
    MissingModality { modality: &'static str, view: usize, frame: usize },
    #[error("hash mismatch for `{0}`")]
    Hash(String),
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error("no foreground coverage at resolution {0}")]
    NoCoverage(usize),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Remesh(#[from] RemeshError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
