//! Per-box numeric features: positional embeddings of coordinates and
//! reading-order integers, hand-made text statistics, and one-hot characters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::doc::{Page, WordBox};
use crate::geometry::{BoxOrder, ReadingOrder};

/// Symbols kept by [`normalize_text`], in one-hot order. `PAD` follows them.
pub const ALPHABET: [char; 53] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's',
    't', 'u', 'v', 'w', 'x', 'y', 'z', '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', ' ', ',',
    '.', '-', '+', ':', '/', '%', '?', '$', '£', '€', '#', '(', ')', '&', '\'',
];
/// Index of the padding symbol.
pub const PAD: usize = ALPHABET.len();
pub const ALPHABET_SIZE: usize = ALPHABET.len() + 1;

pub const MAX_CHARS: usize = 40;
pub const EMBED_DIM: usize = 8;
pub const EMBED_DIVISOR: f64 = 10_000.0;
/// Coordinates in [0, 1] are multiplied by this before embedding.
pub const COORD_EMBED_SCALE: f64 = 100.0;
pub const NUMBER_SCALES: [f64; 7] = [1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6];

pub const TEXT_FEATURE_DIM: usize = 3 * ALPHABET.len() + 7 + NUMBER_SCALES.len();
pub const POSITION_DIM: usize = 8 * EMBED_DIM;
pub const FEATURE_DIM: usize = POSITION_DIM + TEXT_FEATURE_DIM;

pub fn alphabet_index(c: char) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == c)
}

/// Deaccents, lowercases and drops every character outside [`ALPHABET`].
pub fn normalize_text(word: &str) -> String {
    word.nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .filter(|c| alphabet_index(*c).is_some())
        .collect()
}

/// Parses `[+-]digits[(.|,)digits]`.
pub fn parse_number(word: &str) -> Option<f64> {
    let body = word.strip_prefix(['+', '-']).unwrap_or(word);
    let (int, frac) = match body.find(['.', ',']) {
        Some(p) => (&body[..p], Some(&body[p + 1..])),
        None => (body, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    let canonical = match frac {
        Some(f) => format!("{int}.{f}"),
        None => int.to_string(),
    };
    let v: f64 = canonical.parse().ok()?;
    Some(if word.starts_with('-') { -v } else { v })
}

/// Hand-made statistics of a word. Layout of [`TextFeatures::to_vec`]:
///
/// | range     | content                                           |
/// |-----------|---------------------------------------------------|
/// | 0..53     | counts of each alphabet symbol                    |
/// | 53..106   | counts over the first two normalized characters   |
/// | 106..159  | counts over the last two normalized characters    |
/// | 159       | word length (original characters)                 |
/// | 160, 161  | uppercase, lowercase                              |
/// | 162, 163  | alphabetic, digits                                |
/// | 164       | 1 if the word parses as a number                  |
/// | 165       | characters dropped by normalization               |
/// | 166..173  | number scaled by 10^0..10^6, clamped to [-1, 1]   |
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub char_counts: [f64; 53],
    pub first2_counts: [f64; 53],
    pub last2_counts: [f64; 53],
    pub word_length: f64,
    pub n_upper: f64,
    pub n_lower: f64,
    pub n_alpha: f64,
    pub n_digit: f64,
    pub is_number: f64,
    pub n_discarded: f64,
    pub number_scales: [f64; 7],
}

impl Default for TextFeatures {
    fn default() -> Self {
        TextFeatures {
            char_counts: [0.0; 53],
            first2_counts: [0.0; 53],
            last2_counts: [0.0; 53],
            word_length: 0.0,
            n_upper: 0.0,
            n_lower: 0.0,
            n_alpha: 0.0,
            n_digit: 0.0,
            is_number: 0.0,
            n_discarded: 0.0,
            number_scales: [0.0; 7],
        }
    }
}

impl TextFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(TEXT_FEATURE_DIM);
        self.write_into(&mut v);
        v
    }

    fn write_into(&self, v: &mut Vec<f64>) {
        v.extend_from_slice(&self.char_counts);
        v.extend_from_slice(&self.first2_counts);
        v.extend_from_slice(&self.last2_counts);
        v.extend_from_slice(&[
            self.word_length,
            self.n_upper,
            self.n_lower,
            self.n_alpha,
            self.n_digit,
            self.is_number,
            self.n_discarded,
        ]);
        v.extend_from_slice(&self.number_scales);
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        if v.len() != TEXT_FEATURE_DIM {
            return None;
        }
        let arr53 = |s: &[f64]| -> [f64; 53] { s.try_into().expect("53 entries") };
        Some(TextFeatures {
            char_counts: arr53(&v[0..53]),
            first2_counts: arr53(&v[53..106]),
            last2_counts: arr53(&v[106..159]),
            word_length: v[159],
            n_upper: v[160],
            n_lower: v[161],
            n_alpha: v[162],
            n_digit: v[163],
            is_number: v[164],
            n_discarded: v[165],
            number_scales: v[166..173].try_into().expect("7 entries"),
        })
    }

    fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let v: Vec<f64> = self.to_vec().into_iter().map(&mut f).collect();
        TextFeatures::from_slice(&v).expect("same width")
    }
}

pub fn extract_text_features(word: &str) -> TextFeatures {
    let mut f = TextFeatures::default();
    let normalized = normalize_text(word);
    let norm: Vec<usize> = normalized.chars().filter_map(alphabet_index).collect();
    for &i in &norm {
        f.char_counts[i] += 1.0;
    }
    for &i in norm.iter().take(2) {
        f.first2_counts[i] += 1.0;
    }
    for &i in norm.iter().skip(norm.len().saturating_sub(2)) {
        f.last2_counts[i] += 1.0;
    }
    let original = word.chars().count();
    f.word_length = original as f64;
    for c in word.chars() {
        f.n_upper += f64::from(u8::from(c.is_uppercase()));
        f.n_lower += f64::from(u8::from(c.is_lowercase()));
        f.n_alpha += f64::from(u8::from(c.is_alphabetic()));
        f.n_digit += f64::from(u8::from(c.is_ascii_digit()));
    }
    // normalization can expand (e.g. ligatures), hence the saturation
    f.n_discarded = original.saturating_sub(normalized.chars().count()) as f64;
    if let Some(v) = parse_number(word) {
        f.is_number = 1.0;
        for (slot, s) in f.number_scales.iter_mut().zip(NUMBER_SCALES) {
            *slot = (v / s).clamp(-1.0, 1.0);
        }
    }
    f
}

/// Sinusoidal embedding: `sin(v / D^(i/4))` for `i < 4`, then the cosines.
pub fn positional_embedding(value: f64, divisor: f64) -> [f64; EMBED_DIM] {
    let half = EMBED_DIM / 2;
    let mut out = [0.0; EMBED_DIM];
    for i in 0..half {
        let angle = value / divisor.powf(i as f64 / half as f64);
        out[i] = angle.sin();
        out[half + i] = angle.cos();
    }
    out
}

/// The first 40 normalized characters of a word as alphabet indices, padded
/// with [`PAD`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharTensor(pub [u8; MAX_CHARS]);

impl CharTensor {
    pub fn padding() -> Self {
        CharTensor([PAD as u8; MAX_CHARS])
    }

    pub fn indices(&self) -> &[u8; MAX_CHARS] {
        &self.0
    }

    /// Dense `40 x 54` one-hot matrix, row-major.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut m = vec![0.0; MAX_CHARS * ALPHABET_SIZE];
        for (row, &c) in self.0.iter().enumerate() {
            m[row * ALPHABET_SIZE + c as usize] = 1.0;
        }
        m
    }
}

pub fn encode_chars(word: &str) -> CharTensor {
    let mut t = CharTensor::padding();
    for (slot, c) in t
        .0
        .iter_mut()
        .zip(normalize_text(word).chars().filter_map(alphabet_index))
    {
        *slot = c as u8;
    }
    t
}

/// Everything the network knows about one box, before embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// Position of the box in its page.
    pub source: usize,
    pub bbox: [f64; 4],
    pub order: BoxOrder,
    pub text: TextFeatures,
    pub chars: CharTensor,
}

impl FeatureRow {
    pub fn from_box(source: usize, wb: &WordBox, order: BoxOrder) -> Self {
        let (text, chars) = match (&wb.text, &wb.features) {
            (Some(t), _) => (extract_text_features(t), encode_chars(t)),
            (None, Some(pre)) => (
                TextFeatures::from_slice(pre).unwrap_or_default(),
                CharTensor::padding(),
            ),
            (None, None) => (TextFeatures::default(), CharTensor::padding()),
        };
        FeatureRow {
            source,
            bbox: wb.bbox.as_array(),
            order,
            text,
            chars,
        }
    }

    /// The [`FEATURE_DIM`]-wide numeric row: coordinate embeddings (4 x 8),
    /// reading-order embeddings (4 x 8), then text features.
    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        for c in self.bbox {
            v.extend_from_slice(&positional_embedding(c * COORD_EMBED_SCALE, EMBED_DIVISOR));
        }
        for o in self.order.as_array() {
            v.extend_from_slice(&positional_embedding(o as f64, EMBED_DIVISOR));
        }
        self.text.write_into(&mut v);
        v
    }
}

/// One row per box, in reading-order sequence.
pub fn assemble_features(page: &Page, order: &ReadingOrder) -> Vec<FeatureRow> {
    order
        .sequence()
        .into_iter()
        .map(|i| FeatureRow::from_box(i, &page.wordboxes[i], order.boxes[i]))
        .collect()
}

pub const AUGMENT_AMPLITUDE: f64 = 0.01;

/// Multiplies raw coordinates and text features by `1 + u`, `u ~ U[-a, a]`.
pub fn augment_with(rows: &[FeatureRow], seed: u64, amplitude: f64) -> Vec<FeatureRow> {
    if amplitude == 0.0 {
        return rows.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = move |v: f64| v * (1.0 + rng.random_range(-amplitude..=amplitude));
    rows.iter()
        .map(|r| {
            let mut out = r.clone();
            for c in out.bbox.iter_mut() {
                *c = jitter(*c);
            }
            out.text = r.text.map(&mut jitter);
            out
        })
        .collect()
}

pub fn augment(rows: &[FeatureRow], seed: u64) -> Vec<FeatureRow> {
    augment_with(rows, seed, AUGMENT_AMPLITUDE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::Rect;
    use crate::geometry::{assign_reading_order, LINE_OVERLAP_THRESHOLD};
    use proptest::prelude::*;

    #[test]
    fn alphabet_layout() {
        assert_eq!(ALPHABET_SIZE, 54);
        assert_eq!(TEXT_FEATURE_DIM, 173);
        assert_eq!(FEATURE_DIM, 237);
        let mut s = ALPHABET.to_vec();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 53);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Crème"), "creme");
        assert_eq!(normalize_text("§†"), "");
        assert_eq!(normalize_text("Total: $1,5"), "total: $1,5");
        assert_eq!(normalize_text("Příliš €5"), "prilis €5");
    }

    #[test]
    fn number_parsing() {
        assert_eq!(parse_number("250"), Some(250.0));
        assert_eq!(parse_number("-3.25"), Some(-3.25));
        assert_eq!(parse_number("+1,5"), Some(1.5));
        assert_eq!(parse_number("1,234.5"), None);
        assert_eq!(parse_number("12,"), None);
        assert_eq!(parse_number(".5"), None);
        assert_eq!(parse_number("AB12"), None);
        assert_eq!(parse_number(""), None);
        assert_eq!(parse_number("-"), None);
    }

    #[test]
    fn empty_word_features() {
        assert!(extract_text_features("").to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixed_word_features() {
        let f = extract_text_features("AB12");
        assert_eq!(f.word_length, 4.0);
        assert_eq!(f.n_upper, 2.0);
        assert_eq!(f.n_lower, 0.0);
        assert_eq!(f.n_alpha, 2.0);
        assert_eq!(f.n_digit, 2.0);
        assert_eq!(f.number_scales, [0.0; 7]);
        assert_eq!(f.first2_counts[0], 1.0);
        assert_eq!(f.first2_counts[1], 1.0);
        assert_eq!(f.last2_counts[alphabet_index('1').unwrap()], 1.0);
        assert_eq!(f.last2_counts[alphabet_index('2').unwrap()], 1.0);
    }

    #[test]
    fn number_scales_clamped() {
        let f = extract_text_features("250");
        let expected = [1.0, 1.0, 1.0, 0.25, 0.025, 0.0025, 0.00025];
        for (a, b) in f.number_scales.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert_eq!(f.is_number, 1.0);
        let neg = extract_text_features("-50");
        assert_eq!(neg.number_scales[0], -1.0);
        assert_eq!(neg.number_scales[2], -0.5);
    }

    #[test]
    fn embedding_values() {
        assert_eq!(positional_embedding(0.0, EMBED_DIVISOR), [0., 0., 0., 0., 1., 1., 1., 1.]);
        assert_eq!(positional_embedding(0.0, 3.0), positional_embedding(0.0, 99.0));
        let e = positional_embedding(1.0, EMBED_DIVISOR);
        assert!((e[0] - 0.8414709848).abs() < 1e-9);
        assert!((e[4] - 0.5403023059).abs() < 1e-9);
        // i = 1 uses divisor^(1/4) = 10
        assert!((e[1] - (0.1f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn char_encoding() {
        let t = encode_chars("");
        assert!(t.0.iter().all(|&c| c as usize == PAD));
        let t = encode_chars("ab");
        assert_eq!(&t.0[..3], &[0, 1, PAD as u8]);
        let long: String = "a".repeat(40) + "b";
        assert!(encode_chars(&long).0.iter().all(|&c| c == 0));
        let oh = encode_chars("ab").one_hot();
        assert_eq!(oh.len(), MAX_CHARS * ALPHABET_SIZE);
        for row in oh.chunks(ALPHABET_SIZE) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    fn sample_page() -> Page {
        let boxes = vec![
            WordBox::new(0, Some("Total".into()), Rect::new(0.1, 0.5, 0.2, 0.52)),
            WordBox::new(1, Some("12.50".into()), Rect::new(0.3, 0.5, 0.4, 0.52)),
            WordBox::new(2, Some("Invoice".into()), Rect::new(0.1, 0.1, 0.25, 0.12)),
        ];
        Page::new(100.0, 100.0, boxes).unwrap()
    }

    #[test]
    fn assemble_in_reading_order() {
        let p = sample_page();
        let o = assign_reading_order(&p, LINE_OVERLAP_THRESHOLD);
        let rows = assemble_features(&p, &o);
        let sources: Vec<usize> = rows.iter().map(|r| r.source).collect();
        assert_eq!(sources, vec![2, 0, 1]);
        // straight-line recomputation of the second row
        let r = &rows[1];
        let mut expected = Vec::new();
        for c in [0.1, 0.5, 0.2, 0.52] {
            let v: f64 = c * 100.0;
            for i in 0..4 {
                expected.push((v / 10f64.powi(i)).sin());
            }
            for i in 0..4 {
                expected.push((v / 10f64.powi(i)).cos());
            }
        }
        for o in [1.0f64, 0.0, 0.0, 0.0] {
            for i in 0..4 {
                expected.push((o / 10f64.powi(i)).sin());
            }
            for i in 0..4 {
                expected.push((o / 10f64.powi(i)).cos());
            }
        }
        let got = r.values();
        assert_eq!(got.len(), FEATURE_DIM);
        for (k, (a, b)) in got.iter().zip(&expected).enumerate() {
            assert!((a - b).abs() < 1e-12, "slot {k}: {a} vs {b}");
        }
        assert_eq!(r.order.as_array(), [1, 0, 0, 0]);
        assert_eq!(&got[POSITION_DIM..], &extract_text_features("Total").to_vec()[..]);
    }

    #[test]
    fn empty_and_single_page() {
        let p = Page::new(1.0, 1.0, vec![]).unwrap();
        assert!(assemble_features(&p, &assign_reading_order(&p, 0.5)).is_empty());
        let p = Page::new(
            1.0,
            1.0,
            vec![WordBox::new(0, None, Rect::new(0.1, 0.1, 0.2, 0.2))],
        )
        .unwrap();
        let rows = assemble_features(&p, &assign_reading_order(&p, 0.5));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].values().len(), FEATURE_DIM);
    }

    #[test]
    fn augmentation_properties() {
        let p = sample_page();
        let rows = assemble_features(&p, &assign_reading_order(&p, 0.5));
        assert_eq!(augment(&rows, 9), augment(&rows, 9));
        assert_eq!(augment_with(&rows, 9, 0.0), rows);
        let a = augment(&rows, 9);
        for (x, y) in a.iter().zip(&rows) {
            assert_eq!(x.chars, y.chars);
            for (u, v) in x.text.to_vec().iter().zip(y.text.to_vec()) {
                if v == 0.0 {
                    assert_eq!(*u, 0.0);
                }
            }
        }
    }

    #[test]
    fn augmentation_bounds() {
        let row = FeatureRow {
            source: 0,
            bbox: [0.5; 4],
            order: BoxOrder {
                line: 0,
                order_in_line: 0,
                rot_line: 0,
                rot_order_in_line: 0,
            },
            text: TextFeatures::default(),
            chars: CharTensor::padding(),
        };
        let rows = vec![row; 2500];
        let out = augment(&rows, 1);
        for r in &out {
            for c in r.bbox {
                assert!((0.495..=0.505).contains(&c), "{c}");
            }
        }
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "\\PC{0,20}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn embedding_bounded(v in -1e6f64..1e6) {
            for x in positional_embedding(v, EMBED_DIVISOR) {
                prop_assert!((-1.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn feature_width_constant(s in "\\PC{0,50}") {
            prop_assert_eq!(extract_text_features(&s).to_vec().len(), TEXT_FEATURE_DIM);
            let f = extract_text_features(&s);
            prop_assert!(f.first2_counts.iter().sum::<f64>() <= 2.0);
            prop_assert!(f.last2_counts.iter().sum::<f64>() <= 2.0);
        }
    }
}
