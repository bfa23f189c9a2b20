//! Image files, procedural textures, the toy matting set and dataset directories.

mod codec;
mod dataset;
mod texture;
mod toy;

pub use codec::{
    decode_bytes, decode_image, decode_trimap, encode_bytes, encode_image, encode_trimap, gray_to_label,
    grid_to_trimap, quantize, trimap_gray, trimap_to_grid, ImageFormat, ImageRecord, SUPPORTED_EXTENSIONS,
};
pub use dataset::{load_matting_dir, scan_image_dir, ImageSource, MattingRecord};
pub use texture::{procedural_texture, TextureKind, MIN_TEXTURE_SIZE};
pub use toy::{toy_matting_dataset, ShapeDescriptor, ShapeKind, ToyDataset, ToyMattingItem};
