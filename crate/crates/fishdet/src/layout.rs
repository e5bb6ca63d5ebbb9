//! On-disk dataset layout, VOC style:
//!
//! ```text
//! root/Annotations/<id>.xml
//! root/PNGImages/<id>.png
//! root/ImageSets/Main/{train,val,test}.txt
//! ```

use std::path::{Path, PathBuf};

use fishdet_core::dataset::{DatasetIndex, Split};
use fishdet_core::synth::RgbImage;

use crate::{image_io, manifest, voc, Error};

#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub root: PathBuf,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

impl DatasetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetDir { root: root.into() }
    }

    pub fn annotations(&self) -> PathBuf {
        self.root.join("Annotations")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("PNGImages")
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.root.join("ImageSets").join("Main").join(format!("{split}.txt"))
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.images().join(format!("{id}.png"))
    }

    pub fn read_index(&self) -> Result<DatasetIndex, Error> {
        voc::read_voc_dir(&self.annotations())
    }

    pub fn read_image(&self, id: &str) -> Result<RgbImage, Error> {
        image_io::read_png(&self.image_path(id))
    }

    pub fn write_record(&self, record: &fishdet_core::dataset::AnnotationRecord, image: &RgbImage) -> Result<(), Error> {
        let xml = voc::write_voc_xml(record, "png");
        crate::write_file(&self.annotations().join(format!("{}.xml", record.image_id)), xml.as_bytes())?;
        image_io::write_png(&self.image_path(&record.image_id), image)
    }

    pub fn write_split(&self, split: &Split) -> Result<(), Error> {
        manifest::write_manifest(&self.manifest("train"), &split.train)?;
        manifest::write_manifest(&self.manifest("val"), &split.val)?;
        manifest::write_manifest(&self.manifest("test"), &split.test)
    }

    pub fn read_split(&self, split: &str) -> Result<Vec<String>, Error> {
        manifest::read_manifest(&self.manifest(split))
    }

    pub fn has_splits(&self) -> bool {
        SPLITS.iter().all(|s| self.manifest(s).is_file())
    }
}

pub fn is_dataset_root(path: &Path) -> bool {
    path.join("Annotations").is_dir()
}
