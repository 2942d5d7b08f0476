//! COCO instance-segmentation files: ground truth, predictions and the
//! run-length mask codec they share.

mod dataset;
mod results;
mod rle;

pub use dataset::{export_samples, split_train_test, CocoAnnotation, CocoCategory, CocoDataset, CocoImage, CocoInfo};
pub use results::{read_results, write_results, CocoResult};
pub use rle::RleMask;
