//! On-disk synthetic datasets: a manifest plus one image, label map and
//! generating field per subject.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::Subject;
use crate::volumes::{
    load_labels, load_volume, make_dataset, save_field, save_labels, save_volume, write_atomic, DatasetSpec, FileFormat,
};

pub const MANIFEST: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFiles {
    pub image: String,
    pub labels: Option<String>,
    /// Deformation that produced the subject from the template.
    pub field: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: Option<DatasetSpec>,
    pub template: Option<SubjectFiles>,
    pub subjects: Vec<SubjectFiles>,
}

fn file_name(stem: &str, k: Option<usize>, format: FileFormat) -> String {
    let ext = match format {
        FileFormat::Nifti1 => "nii",
        FileFormat::Raw => "raw",
    };
    match k {
        Some(k) => format!("{stem}_{k:03}.{ext}"),
        None => format!("{stem}.{ext}"),
    }
}

/// Generates the dataset described by `spec` into `dir`.
pub fn write_synthetic(dir: &Path, spec: &DatasetSpec, format: FileFormat) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (template, template_labels, subjects) = make_dataset(spec)?;
    let tpl = SubjectFiles {
        image: file_name("template", None, format),
        labels: Some(file_name("template_labels", None, format)),
        field: None,
    };
    save_volume(&template, dir.join(&tpl.image), format)?;
    save_labels(&template_labels, dir.join(tpl.labels.as_ref().unwrap()), format)?;
    let mut files = Vec::with_capacity(subjects.len());
    for (k, s) in subjects.iter().enumerate() {
        let f = SubjectFiles {
            image: file_name("image", Some(k), format),
            labels: Some(file_name("labels", Some(k), format)),
            field: Some(file_name("field", Some(k), format)),
        };
        save_volume(&s.image, dir.join(&f.image), format)?;
        save_labels(&s.labels, dir.join(f.labels.as_ref().unwrap()), format)?;
        save_field(&s.field, dir.join(f.field.as_ref().unwrap()), format)?;
        files.push(f);
    }
    let manifest = Manifest {
        spec: Some(spec.clone()),
        template: Some(tpl),
        subjects: files,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

fn resolve(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Loads every subject listed in the manifest of `dir`, in order.
pub fn load_subjects(dir: &Path) -> Result<Vec<Subject>> {
    read_manifest(dir)?
        .subjects
        .iter()
        .map(|f| {
            let ip = resolve(dir, &f.image);
            let image = load_volume(&ip, FileFormat::from_path(&ip))?;
            let labels = match &f.labels {
                Some(l) => {
                    let lp = resolve(dir, l);
                    let labels = load_labels(&lp, FileFormat::from_path(&lp))?;
                    if labels.shape() != image.shape() {
                        return Err(Error::Data(format!("{} does not match {}", lp.display(), ip.display())));
                    }
                    Some(labels)
                }
                None => None,
            };
            Ok(Subject::new(image, labels))
        })
        .collect()
}

/// Splits subjects in file order into training, validation and test parts.
pub fn split(subjects: Vec<Subject>, train: usize, val: usize) -> Result<(Vec<Subject>, Vec<Subject>, Vec<Subject>)> {
    if subjects.len() < train + val {
        return Err(Error::Config(format!(
            "dataset has {} subjects, split needs {} for training and {} for validation",
            subjects.len(),
            train,
            val
        )));
    }
    let mut rest = subjects;
    let test = rest.split_off(train + val);
    let val_set = rest.split_off(train);
    Ok((rest, val_set, test))
}
