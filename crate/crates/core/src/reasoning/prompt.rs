//! The three-step aesthetic reasoning prompt.
//!
//! The prompt text is fixed and versioned by [`PROMPT_VERSION`]; any wording
//! change must bump the version since it invalidates every cached transcript.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::{Digest32, ImageTransport, ReasoningError};
use crate::attribute::AestheticAttribute;

pub const PROMPT_VERSION: &str = "aesthetic-cot/v1";

pub const STEP_IDENTIFY: &str = "Identify";
pub const STEP_AESTHETIC_THOUGHTS: &str = "Aesthetic Thoughts";
pub const STEP_TARGET_DESCRIPTION: &str = "Target Item Description";

const SYSTEM_TEXT: &str = "You are a professional fashion stylist who completes outfits. \
Reason step by step as instructed and reply with a single JSON object and nothing else.";

/// Which reasoning steps the prompt asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    pub identify: bool,
    pub aesthetic_thoughts: bool,
}

impl Default for PromptVariant {
    fn default() -> Self {
        Self { identify: true, aesthetic_thoughts: true }
    }
}

/// Where an image comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageSource {
    Path(PathBuf),
    Url(String),
}

impl ImageSource {
    /// Interprets `location` as a URL when it has a scheme, else as a path.
    pub fn from_location(location: &str) -> Self {
        if location.contains("://") {
            ImageSource::Url(location.to_string())
        } else {
            ImageSource::Path(PathBuf::from(location))
        }
    }
}

/// An image reference with the label it is shown under in the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub label: String,
    pub source: ImageSource,
}

/// What the reasoning step is asked to solve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskInput {
    /// Pick one of the labeled candidate images.
    Fitb { candidates: Vec<ImageSource> },
    /// Describe the missing item of a textual category.
    Cir { category: String },
}

/// How an image travels in the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImagePayload {
    /// `data:` URL with base64 content.
    Inline { media_type: String, data_url: String },
    Url { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub label: String,
    /// SHA-256 of the image bytes (or of the URL string in URL mode).
    pub digest: Digest32,
    pub payload: ImagePayload,
}

/// A fully rendered prompt: system text, user text and attached images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub images: Vec<ImageAttachment>,
    pub variant: PromptVariant,
}

impl PromptBundle {
    /// Digest over the prompt text and the attached image digests.
    pub fn prompt_hash(&self) -> Digest32 {
        let mut h = Sha256::new();
        for part in [PROMPT_VERSION, &self.system, &self.user] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update((self.images.len() as u64).to_le_bytes());
        for img in &self.images {
            h.update((img.label.len() as u64).to_le_bytes());
            h.update(img.label.as_bytes());
            h.update(img.digest.0);
        }
        Digest32(h.finalize().into())
    }
}

fn media_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn attach(label: String, source: &ImageSource, transport: ImageTransport) -> Result<ImageAttachment, ReasoningError> {
    match source {
        ImageSource::Url(url) => Ok(ImageAttachment {
            label,
            digest: Digest32(Sha256::digest(url.as_bytes()).into()),
            payload: ImagePayload::Url { url: url.clone() },
        }),
        ImageSource::Path(path) => {
            let bytes = fs::read(path)
                .map_err(|e| ReasoningError::UnreadableImage { path: path.clone(), source: e })?;
            let digest = Digest32(Sha256::digest(&bytes).into());
            let payload = match transport {
                ImageTransport::Inline => {
                    let media_type = media_type_for(path).to_string();
                    let b64 = base64::engine::general_purpose::STANDARD.encode(&bytes);
                    ImagePayload::Inline { data_url: format!("data:{media_type};base64,{b64}"), media_type }
                }
                ImageTransport::Url => ImagePayload::Url { url: format!("file://{}", path.display()) },
            };
            Ok(ImageAttachment { label, digest, payload })
        }
    }
}

fn candidate_label(i: usize) -> String {
    // A, B, ..., Z, AA, AB, ...
    let mut n = i;
    let mut s = String::new();
    loop {
        s.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    format!("Candidate {s}")
}

fn render_user_text(outfit_labels: &[String], task: &TaskInput, candidate_labels: &[String], variant: PromptVariant) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "[{PROMPT_VERSION}]");
    t.push_str("The attached images labeled ");
    t.push_str(&outfit_labels.join(", "));
    t.push_str(" form a partial outfit that is missing one item.\n");
    match task {
        TaskInput::Fitb { .. } => {
            let _ = writeln!(
                t,
                "Task: choose the candidate that best completes the outfit. The candidates are the attached images labeled {}.",
                candidate_labels.join(", ")
            );
        }
        TaskInput::Cir { category } => {
            let _ = writeln!(t, "Task: the missing item belongs to the category \"{category}\".");
        }
    }
    t.push('\n');

    let mut step = 1;
    if variant.identify {
        let _ = writeln!(
            t,
            "Step {step} - {STEP_IDENTIFY}: state the role of each outfit item (for example top, bottom, outerwear, shoes, accessory) \
and of the task input, and how they relate visually and semantically."
        );
        step += 1;
    }
    if variant.aesthetic_thoughts {
        let names: Vec<&str> = AestheticAttribute::ALL.iter().map(|a| a.as_str()).collect();
        let _ = writeln!(
            t,
            "Step {step} - {STEP_AESTHETIC_THOUGHTS}: reason about the six aesthetic attributes {}. For each attribute give a \
short keyword describing what the missing item should have, and a reason explaining why it fits the outfit.",
            names.join(", ")
        );
        step += 1;
    }
    let _ = writeln!(
        t,
        "Step {step} - {STEP_TARGET_DESCRIPTION}: combining the previous steps, write a detailed image description of the missing item."
    );
    t.push('\n');

    t.push_str("Respond with exactly one JSON object with these fields:\n{");
    let mut fields = Vec::new();
    if variant.identify {
        fields.push("\"identification\": string".to_string());
    }
    if variant.aesthetic_thoughts {
        let attrs: Vec<String> = AestheticAttribute::ALL
            .iter()
            .map(|a| format!("\"{a}\": {{\"keyword\": string, \"reason\": string}}"))
            .collect();
        fields.push(format!("\"attributes\": {{{}}}", attrs.join(", ")));
    }
    fields.push("\"target_description\": string".to_string());
    t.push_str(&fields.join(", "));
    t.push_str("}\n");
    t
}

/// Renders the prompt for a partial outfit and a task input.
///
/// Outfit images are attached first (labeled `Outfit item 1..n`), then FITB
/// candidates (labeled `Candidate A..`). CIR tasks attach no extra images.
pub fn build_prompt(
    outfit_images: &[ImageSource],
    task: &TaskInput,
    variant: PromptVariant,
    transport: ImageTransport,
    max_images: usize,
) -> Result<PromptBundle, ReasoningError> {
    if outfit_images.is_empty() {
        return Err(ReasoningError::EmptyOutfit);
    }
    let candidates: &[ImageSource] = match task {
        TaskInput::Fitb { candidates } => candidates,
        TaskInput::Cir { .. } => &[],
    };
    let count = outfit_images.len() + candidates.len();
    if count > max_images {
        return Err(ReasoningError::TooManyImages { count, max: max_images });
    }
    let outfit_labels: Vec<String> = (1..=outfit_images.len()).map(|i| format!("Outfit item {i}")).collect();
    let candidate_labels: Vec<String> = (0..candidates.len()).map(candidate_label).collect();

    let mut images = Vec::with_capacity(count);
    for (label, src) in outfit_labels.iter().zip(outfit_images) {
        images.push(attach(label.clone(), src, transport)?);
    }
    for (label, src) in candidate_labels.iter().zip(candidates) {
        images.push(attach(label.clone(), src, transport)?);
    }
    Ok(PromptBundle {
        system: SYSTEM_TEXT.to_string(),
        user: render_user_text(&outfit_labels, task, &candidate_labels, variant),
        images,
        variant,
    })
}
