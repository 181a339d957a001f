//! Synthetic invoices: a letterhead, an address block, small key-value
//! tables holding one annotated field each, a line-item table with optional
//! header, a paragraph of noise text and a footer. Documents of one layout
//! family share geometry up to jitter.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BoxRecord, DatasetRecord, PageRecord};
use crate::doc::{ClassSchema, Page, Rect, WordBox};
use crate::error::{Error, Result};

pub const PAGE_WIDTH: f64 = 595.0;
pub const PAGE_HEIGHT: f64 = 842.0;
const MAX_DISTRACTORS: usize = 3;
const BOTTOM_LIMIT: f64 = 0.93;
const FOOTER_TOP: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub documents: usize,
    pub families: usize,
    /// Classes besides line-item body and header.
    pub field_classes: usize,
    /// Inclusive range of line-item rows per document.
    pub rows: [usize; 2],
    /// Inclusive range of line-item columns per family.
    pub columns: [usize; 2],
    /// Chance that a family prints a header row.
    pub header_probability: f64,
    /// Inclusive range of key-value tables per family (at most 3).
    pub distractor_tables: [usize; 2],
    /// Inclusive range of noise-paragraph words per document.
    pub noise_words: [usize; 2],
    /// Maximum per-document horizontal shift of each column.
    pub column_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            documents: 100,
            families: 10,
            field_classes: 10,
            rows: [3, 8],
            columns: [3, 6],
            header_probability: 0.8,
            distractor_tables: [1, 3],
            noise_words: [40, 80],
            column_jitter: 0.004,
            seed: 0,
        }
    }
}

const FIELD_NAMES: [&str; 10] = [
    "total_amount",
    "invoice_number",
    "issue_date",
    "due_date",
    "iban",
    "vat_id",
    "order_number",
    "customer_id",
    "bank_code",
    "tax_amount",
];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.documents == 0 || self.families == 0 {
            return bad("documents and families must be positive".into());
        }
        for (name, [lo, hi]) in [
            ("rows", self.rows),
            ("columns", self.columns),
            ("distractor_tables", self.distractor_tables),
            ("noise_words", self.noise_words),
        ] {
            if lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.rows[0] == 0 || self.rows[1] > 16 {
            return bad(format!("rows must lie in [1, 16], got {:?}", self.rows));
        }
        if self.columns[0] < 2 || self.columns[1] > 7 {
            return bad(format!("columns must lie in [2, 7], got {:?}", self.columns));
        }
        if self.distractor_tables[1] > MAX_DISTRACTORS {
            return bad(format!("at most {MAX_DISTRACTORS} distractor tables"));
        }
        if self.distractor_tables[0] > self.field_classes {
            return bad(format!(
                "{} distractor tables need as many field classes, have {}",
                self.distractor_tables[0], self.field_classes
            ));
        }
        if !(0.0..=1.0).contains(&self.header_probability) {
            return bad("header_probability must lie in [0, 1]".into());
        }
        if !(0.0..=0.02).contains(&self.column_jitter) {
            return bad("column_jitter must lie in [0, 0.02]".into());
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        2 + self.field_classes
    }

    pub fn field_name(k: usize) -> String {
        FIELD_NAMES
            .get(k)
            .map_or_else(|| format!("field_{k}"), |s| s.to_string())
    }

    pub fn schema(&self) -> Result<ClassSchema> {
        let fields: Vec<String> = (0..self.field_classes).map(Self::field_name).collect();
        ClassSchema::with_fields(&fields)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ColumnKind {
    Code,
    Description,
    Quantity,
    Unit,
    UnitPrice,
    Vat,
    Amount,
}

impl ColumnKind {
    fn relative_width(self) -> f64 {
        match self {
            ColumnKind::Description => 3.0,
            ColumnKind::Code => 1.2,
            ColumnKind::Quantity | ColumnKind::Unit | ColumnKind::Vat => 0.8,
            ColumnKind::UnitPrice | ColumnKind::Amount => 1.3,
        }
    }

    fn header_words(self) -> &'static [&'static [&'static str]] {
        match self {
            ColumnKind::Code => &[&["Code"], &["Item", "No."], &["SKU"]],
            ColumnKind::Description => &[&["Description"], &["Item"], &["Goods", "and", "services"]],
            ColumnKind::Quantity => &[&["Qty"], &["Quantity"], &["Pcs"]],
            ColumnKind::Unit => &[&["Unit"], &["UoM"]],
            ColumnKind::UnitPrice => &[&["Unit", "price"], &["Price"], &["Rate"]],
            ColumnKind::Vat => &[&["VAT"], &["Tax", "%"]],
            ColumnKind::Amount => &[&["Amount"], &["Total"], &["Line", "total"]],
        }
    }

    fn right_aligned(self) -> bool {
        matches!(self, ColumnKind::UnitPrice | ColumnKind::Amount | ColumnKind::Quantity)
    }
}

#[derive(Debug, Clone)]
struct Column {
    kind: ColumnKind,
    left: f64,
    width: f64,
    header: Vec<String>,
}

#[derive(Debug, Clone)]
struct Distractor {
    field: usize,
    key: Vec<String>,
    rows: usize,
    /// Row holding the annotated value.
    field_row: usize,
    left: f64,
    key_width: f64,
    fillers: Vec<(Vec<String>, FillerValue)>,
}

#[derive(Debug, Clone, Copy)]
enum FillerValue {
    Money,
    Date,
    Code,
    Words,
}

#[derive(Debug, Clone)]
struct Family {
    id: String,
    font: f64,
    char_w: f64,
    pitch: f64,
    letterhead_left: f64,
    address_left: f64,
    table_left: f64,
    table_width: f64,
    table_top: f64,
    columns: Vec<Column>,
    header: bool,
    above: Vec<Distractor>,
    above_left: f64,
    below: Vec<Distractor>,
    paragraph_width: f64,
    /// Share of the noise paragraph printed between the header area and the table.
    paragraph_above: f64,
    /// Keys of the unannotated totals block under the amount column.
    totals: Vec<Vec<String>>,
}

const WORDS: &[&str] = &[
    "steel", "bolt", "washer", "cable", "adapter", "service", "consulting", "hours", "license",
    "support", "monthly", "annual", "printer", "paper", "toner", "delivery", "shipping", "handling",
    "installation", "repair", "spare", "part", "module", "sensor", "valve", "pump", "filter",
    "bracket", "panel", "frame", "cover", "screw", "nut", "hinge", "lamp", "switch", "socket",
    "plug", "battery", "charger", "monitor", "keyboard", "mouse", "desk", "chair", "cabinet",
    "shelf", "box", "bag", "tape", "glue", "paint", "brush", "roller", "ladder", "drill", "saw",
    "hammer", "wrench",
];

const NOISE: &[&str] = &[
    "the", "of", "and", "to", "in", "for", "is", "on", "that", "by", "this", "with", "you", "it",
    "not", "or", "be", "are", "from", "at", "as", "your", "all", "have", "new", "more", "an",
    "was", "we", "will", "please", "payment", "thank", "business", "goods", "remain", "property",
    "until", "paid", "full", "late", "interest", "charged", "per", "day", "questions", "contact",
    "us", "regarding", "invoice", "terms", "conditions", "apply",
];

const TOTALS: &[&[&str]] = &[
    &["Subtotal"],
    &["Shipping"],
    &["Rounding"],
    &["Net", "total"],
    &["Deposit"],
];

const COMPANY: &[&str] = &[
    "Acme", "Globex", "Initech", "Umbrella", "Stark", "Wayne", "Wonka", "Hooli", "Vandelay",
    "Tyrell", "Cyberdyne", "Soylent", "Massive", "Dynamic", "Northwind", "Contoso",
];

const SUFFIX: &[&str] = &["Ltd", "Inc.", "GmbH", "s.r.o.", "LLC", "AG", "Corp."];
const STREETS: &[&str] = &["Main", "High", "Station", "Park", "Church", "Mill", "Bridge", "Market"];
const CITIES: &[&str] = &["Prague", "Brno", "Vienna", "Berlin", "Munich", "Leeds", "Lyon", "Graz"];

fn field_keys(field: usize) -> &'static [&'static [&'static str]] {
    match field {
        0 => &[&["Total"], &["Total", "due"], &["Amount", "due"]],
        1 => &[&["Invoice", "No."], &["Invoice", "#"], &["Document", "no."]],
        2 => &[&["Date"], &["Issue", "date"], &["Invoice", "date"]],
        3 => &[&["Due", "date"], &["Payable", "by"], &["Due"]],
        4 => &[&["IBAN"], &["Account"]],
        5 => &[&["VAT", "ID"], &["Tax", "ID"], &["VAT", "reg."]],
        6 => &[&["Order"], &["PO", "number"], &["Order", "ref."]],
        7 => &[&["Customer"], &["Client", "ID"], &["Customer", "no."]],
        8 => &[&["SWIFT"], &["BIC"], &["Bank", "code"]],
        9 => &[&["VAT"], &["Tax"], &["VAT", "amount"]],
        _ => &[&["Reference"], &["Ref."]],
    }
}

const FILLERS: &[(&[&str], FillerValue)] = &[
    (&["Payment"], FillerValue::Words),
    (&["Currency"], FillerValue::Words),
    (&["Terms"], FillerValue::Words),
    (&["Variable", "symbol"], FillerValue::Code),
    (&["Delivery", "date"], FillerValue::Date),
    (&["Subtotal"], FillerValue::Money),
    (&["Discount"], FillerValue::Money),
    (&["Page"], FillerValue::Code),
];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty list")
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}

fn money(rng: &mut ChaCha8Rng) -> String {
    let v: u32 = rng.random_range(1..200_000);
    let (units, cents) = (v / 100, v % 100);
    if units >= 1000 {
        format!("{},{:03}.{cents:02}", units / 1000, units % 1000)
    } else {
        format!("{units}.{cents:02}")
    }
}

fn date(rng: &mut ChaCha8Rng) -> String {
    let (d, m, y) = (rng.random_range(1..29), rng.random_range(1..13), rng.random_range(2015..2021));
    if rng.random_bool(0.5) {
        format!("{d:02}.{m:02}.{y}")
    } else {
        format!("{y}-{m:02}-{d:02}")
    }
}

fn code(rng: &mut ChaCha8Rng) -> String {
    let a = (b'A' + rng.random_range(0..26)) as char;
    let b = (b'A' + rng.random_range(0..26)) as char;
    format!("{a}{b}-{}", rng.random_range(100..99_999))
}

fn field_value(field: usize, rng: &mut ChaCha8Rng) -> String {
    match field {
        0 | 9 => money(rng),
        2 | 3 => date(rng),
        4 => format!("CZ{:02}0800{:016}", rng.random_range(10..99), rng.random_range(0..10u64.pow(15))),
        5 => format!("CZ{}", rng.random_range(10_000_000..99_999_999)),
        8 => {
            let letters: String = (0..8).map(|_| (b'A' + rng.random_range(0..26)) as char).collect();
            letters
        }
        _ => code(rng),
    }
}

fn filler_value(kind: FillerValue, rng: &mut ChaCha8Rng) -> Vec<String> {
    match kind {
        FillerValue::Money => vec![money(rng)],
        FillerValue::Date => vec![date(rng)],
        FillerValue::Code => vec![rng.random_range(1..100_000).to_string()],
        FillerValue::Words => {
            let opts: &[&[&str]] = &[&["bank", "transfer"], &["EUR"], &["CZK"], &["14", "days"], &["cash"]];
            strings(pick(rng, opts))
        }
    }
}

fn cell_words(kind: ColumnKind, rng: &mut ChaCha8Rng) -> Vec<String> {
    match kind {
        ColumnKind::Code => vec![code(rng)],
        ColumnKind::Description => {
            let n = rng.random_range(1..=3);
            (0..n)
                .map(|i| {
                    let w = pick(rng, WORDS).to_string();
                    if i == 0 {
                        let mut c = w.chars();
                        c.next()
                            .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
                            .unwrap_or_default()
                    } else {
                        w
                    }
                })
                .collect()
        }
        ColumnKind::Quantity => vec![rng.random_range(1..100).to_string()],
        ColumnKind::Unit => vec![pick(rng, &["pcs", "kg", "h", "m", "l", "pack"]).to_string()],
        ColumnKind::UnitPrice | ColumnKind::Amount => vec![money(rng)],
        ColumnKind::Vat => vec![format!("{}%", pick(rng, &[0, 10, 15, 19, 21]))],
    }
}

fn make_distractor(field: usize, family: &Family, rng: &mut ChaCha8Rng) -> Distractor {
    let key = strings(pick(rng, field_keys(field)));
    let rows = rng.random_range(2..=4);
    let mut fillers: Vec<(Vec<String>, FillerValue)> =
        FILLERS.iter().map(|(k, v)| (strings(k), *v)).collect();
    fillers.shuffle(rng);
    fillers.truncate(rows - 1);
    let longest_key = fillers
        .iter()
        .map(|(k, _)| k)
        .chain(std::iter::once(&key))
        .map(|k| text_width(k, family.char_w))
        .fold(0.0, f64::max);
    Distractor {
        field,
        key,
        rows,
        field_row: rng.random_range(0..rows),
        left: 0.0,
        key_width: longest_key + rng.random_range(0.02..0.06),
        fillers,
    }
}

fn text_width(words: &[String], char_w: f64) -> f64 {
    let chars: usize = words.iter().map(|w| w.chars().count()).sum();
    (chars + words.len().saturating_sub(1)) as f64 * char_w
}

fn make_family(index: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Family {
    let font = rng.random_range(0.009..0.012);
    let char_w = font * rng.random_range(0.6..0.75);
    let pitch = font * rng.random_range(1.7..2.3);
    let ncol = rng.random_range(cfg.columns[0]..=cfg.columns[1]);
    let mut kinds = vec![ColumnKind::Description, ColumnKind::Amount];
    let mut optional = vec![
        ColumnKind::Code,
        ColumnKind::Quantity,
        ColumnKind::Unit,
        ColumnKind::UnitPrice,
        ColumnKind::Vat,
    ];
    optional.shuffle(rng);
    kinds.extend(optional.into_iter().take(ncol.saturating_sub(2)));
    // Code first, amount last, the rest shuffled in between.
    let mut middle: Vec<ColumnKind> = kinds
        .iter()
        .copied()
        .filter(|k| !matches!(k, ColumnKind::Code | ColumnKind::Amount))
        .collect();
    middle.shuffle(rng);
    let mut ordered = Vec::with_capacity(kinds.len());
    if kinds.contains(&ColumnKind::Code) {
        ordered.push(ColumnKind::Code);
    }
    ordered.extend(middle);
    ordered.push(ColumnKind::Amount);

    let table_left = rng.random_range(0.04..0.1);
    let table_width = rng.random_range(0.8..0.9) - table_left + 0.04;
    let total: f64 = ordered.iter().map(|k| k.relative_width()).sum();
    let mut x = table_left;
    let columns = ordered
        .into_iter()
        .map(|kind| {
            let width = table_width * kind.relative_width() / total;
            let header = strings(pick(rng, kind.header_words()));
            let c = Column {
                kind,
                left: x,
                width,
                header,
            };
            x += width;
            c
        })
        .collect();

    let mut family = Family {
        id: format!("family-{index:02}"),
        font,
        char_w,
        pitch,
        letterhead_left: if rng.random_bool(0.5) { 0.06 } else { 0.55 },
        address_left: 0.0,
        table_left,
        table_width,
        table_top: rng.random_range(0.28..0.45),
        columns,
        header: rng.random_bool(cfg.header_probability),
        above: Vec::new(),
        above_left: 0.0,
        below: Vec::new(),
        paragraph_width: rng.random_range(0.35..0.5),
        paragraph_above: if rng.random_bool(0.5) { rng.random_range(0.2..0.5) } else { 0.0 },
        totals: {
            let mut keys: Vec<Vec<String>> = TOTALS.iter().map(|k| strings(k)).collect();
            keys.shuffle(rng);
            keys.truncate(rng.random_range(0..=3));
            keys
        },
    };
    let address_left_side = rng.random_bool(0.5);
    family.address_left = if address_left_side { 0.06 } else { 0.55 };
    family.above_left = if address_left_side { 0.55 } else { 0.06 };

    let count = rng
        .random_range(cfg.distractor_tables[0]..=cfg.distractor_tables[1])
        .min(cfg.field_classes);
    let mut fields: Vec<usize> = (0..cfg.field_classes).collect();
    fields.shuffle(rng);
    for (i, &f) in fields.iter().take(count).enumerate() {
        let mut d = make_distractor(f, &family, rng);
        if i < 2 {
            d.left = family.above_left;
            family.above.push(d);
        } else {
            d.left = rng.random_range(0.5..0.6);
            family.below.push(d);
        }
    }
    if let Some(d) = family.below.first() {
        family.paragraph_width = family.paragraph_width.min(d.left - 0.08);
    }
    family
}

struct Canvas {
    boxes: Vec<BoxRecord>,
    annotations: Vec<(usize, f64, f64, f64, f64)>,
    char_w: f64,
    font: f64,
}

impl Canvas {
    /// Places words left to right from `x`; returns the covered rectangle.
    fn words(&mut self, words: &[String], x: f64, y: f64) -> Option<[f64; 4]> {
        let mut cx = x;
        let mut extent: Option<[f64; 4]> = None;
        for w in words {
            let width = w.chars().count().max(1) as f64 * self.char_w;
            let r = [cx, y, cx + width, y + self.font];
            if r[0] < 0.0 || r[2] > 0.995 || r[1] < 0.0 || r[3] > 0.995 {
                break;
            }
            self.boxes.push(BoxRecord {
                bbox: r,
                text: Some(w.clone()),
                features: None,
                extra: BTreeMap::new(),
            });
            extent = Some(match extent {
                None => r,
                Some(e) => [e[0].min(r[0]), e[1].min(r[1]), e[2].max(r[2]), e[3].max(r[3])],
            });
            cx += width + self.char_w;
        }
        extent
    }

    fn annotate(&mut self, class: usize, r: [f64; 4], margin_x: f64, margin_y: f64) {
        self.annotations.push((
            class,
            (r[0] - margin_x).max(0.0),
            (r[1] - margin_y).max(0.0),
            (r[2] + margin_x).min(1.0),
            (r[3] + margin_y).min(1.0),
        ));
    }
}

/// Draws a key-value table at `(left, top)`; returns its bottom edge.
fn draw_distractor(
    c: &mut Canvas,
    d: &Distractor,
    left: f64,
    top: f64,
    pitch: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut fillers = d.fillers.iter();
    for row in 0..d.rows {
        let y = top + row as f64 * pitch;
        let value_x = left + d.key_width;
        if row == d.field_row {
            c.words(&d.key, left, y);
            let value = field_value(d.field, rng);
            if let Some(r) = c.words(&[value], value_x, y) {
                c.annotate(2 + d.field, r, 0.001, 0.001);
            }
        } else if let Some((key, kind)) = fillers.next() {
            c.words(key, left, y);
            let v = filler_value(*kind, rng);
            c.words(&v, value_x, y);
        }
    }
    top + d.rows as f64 * pitch
}

/// Flows noise words into lines of `width` starting at `(left, top)`;
/// returns the top of the next free line.
#[allow(clippy::too_many_arguments)]
fn draw_paragraph(
    c: &mut Canvas,
    words: usize,
    left: f64,
    top: f64,
    width: f64,
    pitch: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if words == 0 {
        return top;
    }
    let (mut px, mut py) = (left, top);
    for _ in 0..words {
        let w = if rng.random_bool(0.15) {
            match rng.random_range(0..3) {
                0 => rng.random_range(1..100).to_string(),
                1 => format!("{}%", rng.random_range(1..30)),
                _ => date(rng),
            }
        } else {
            pick(rng, NOISE).to_string()
        };
        let w_width = w.chars().count() as f64 * c.char_w;
        if px + w_width > left + width && px > left {
            px = left;
            py += pitch;
        }
        if py + c.font > BOTTOM_LIMIT {
            break;
        }
        c.words(&[w], px, py);
        px += w_width + c.char_w;
    }
    py + pitch
}

fn draw_document(
    family: &Family,
    cfg: &SynthConfig,
    doc_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetRecord> {
    let mut c = Canvas {
        boxes: Vec::new(),
        annotations: Vec::new(),
        char_w: family.char_w,
        font: family.font,
    };
    let dx = rng.random_range(-0.01..0.01);
    let dy = rng.random_range(-0.01..0.01);
    let pitch = family.pitch;

    // Letterhead.
    let company = vec![pick(rng, COMPANY).to_string(), pick(rng, SUFFIX).to_string()];
    c.words(&company, family.letterhead_left + dx, 0.03 + dy);
    let street = vec![
        pick(rng, STREETS).to_string(),
        "Street".to_string(),
        rng.random_range(1..200).to_string(),
    ];
    c.words(&street, family.letterhead_left + dx, 0.03 + pitch + dy);

    // Recipient address.
    let top = 0.12 + dy;
    let lines = [
        vec![pick(rng, COMPANY).to_string(), pick(rng, SUFFIX).to_string()],
        vec![pick(rng, STREETS).to_string(), rng.random_range(1..99).to_string()],
        vec![rng.random_range(10_000..99_999).to_string(), pick(rng, CITIES).to_string()],
    ];
    for (i, l) in lines.iter().enumerate() {
        c.words(l, family.address_left + dx, top + i as f64 * pitch);
    }

    // Key-value tables above the line items.
    let mut y = top;
    for d in &family.above {
        y = draw_distractor(&mut c, d, d.left + dx, y, pitch, rng) + pitch;
    }
    let mut above_end = y.max(top + 3.0 * pitch);

    let n_noise = rng.random_range(cfg.noise_words[0]..=cfg.noise_words[1]);
    let n_above = (n_noise as f64 * family.paragraph_above).round() as usize;
    if n_above > 0 {
        let width = family.table_width.min(0.8);
        above_end = draw_paragraph(&mut c, n_above, 0.06 + dx, above_end + pitch, width, pitch, rng);
    }

    // Line-item table.
    let rows = rng.random_range(cfg.rows[0]..=cfg.rows[1]);
    let mut y = (family.table_top + dy).max(above_end + 2.0 * pitch);
    let jitter: Vec<f64> = family
        .columns
        .iter()
        .map(|_| {
            if cfg.column_jitter > 0.0 {
                rng.random_range(-cfg.column_jitter..cfg.column_jitter)
            } else {
                0.0
            }
        })
        .collect();
    let place = |c: &mut Canvas, col: &Column, j: f64, words: &[String], y: f64| {
        let w = text_width(words, c.char_w);
        let x = if col.kind.right_aligned() {
            col.left + col.width - w - c.char_w
        } else {
            col.left + c.char_w
        };
        c.words(words, x + j + dx, y)
    };
    let table_l = family.table_left + dx - 0.004;
    let table_r = family.table_left + family.table_width + dx + 0.004;
    if family.header {
        let mut extent: Option<[f64; 4]> = None;
        for (col, &j) in family.columns.iter().zip(&jitter) {
            if let Some(r) = place(&mut c, col, j, &col.header, y) {
                extent = Some(extent.map_or(r, |e| [e[0], e[1].min(r[1]), e[2], e[3].max(r[3])]));
            }
        }
        if let Some(e) = extent {
            c.annotate(1, [table_l, e[1], table_r, e[3]], 0.0, 0.2 * pitch);
        }
        y += pitch;
    }
    let body_top = y;
    for _ in 0..rows {
        for (col, &j) in family.columns.iter().zip(&jitter) {
            let words = cell_words(col.kind, rng);
            place(&mut c, col, j, &words, y);
        }
        y += pitch;
    }
    let body_bottom = y - pitch + family.font;
    c.annotate(0, [table_l, body_top, table_r, body_bottom], 0.0, 0.2 * pitch);
    y += pitch;

    // Below the table: totals under the amount column, key-value tables on
    // the right, noise text on the left.
    let below_top = y;
    let amount = family.columns.last().expect("amount column");
    let amount_j = *jitter.last().expect("amount column");
    for key in &family.totals {
        let kw = text_width(key, c.char_w);
        c.words(key, amount.left - kw - 2.0 * c.char_w + dx, y);
        place(&mut c, amount, amount_j, &[money(rng)], y);
        y += pitch;
    }
    if !family.totals.is_empty() {
        y += pitch;
    }
    for d in &family.below {
        y = draw_distractor(&mut c, d, d.left + dx, y, pitch, rng) + pitch;
    }
    draw_paragraph(
        &mut c,
        n_noise - n_above,
        0.06 + dx,
        below_top,
        family.paragraph_width,
        pitch,
        rng,
    );
    if y > BOTTOM_LIMIT {
        return Err(Error::Config(format!(
            "{} does not fit on the page with {rows} rows (bottom at {y:.3})",
            family.id
        )));
    }
    let footer = vec![
        "Thank".to_string(),
        "you".to_string(),
        "for".to_string(),
        "your".to_string(),
        "business".to_string(),
    ];
    c.words(&footer, 0.3 + dx, FOOTER_TOP);

    let page = PageRecord {
        width: PAGE_WIDTH,
        height: PAGE_HEIGHT,
        boxes: c.boxes,
        annotations: c.annotations,
        extra: BTreeMap::new(),
    };
    // Geometry sanity: every box is a valid normalized rectangle.
    let check: Vec<WordBox> = page
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| WordBox::new(i, None, Rect::new(b.bbox[0], b.bbox[1], b.bbox[2], b.bbox[3])))
        .collect();
    Page::new(PAGE_WIDTH, PAGE_HEIGHT, check)
        .map_err(|e| Error::Config(format!("{}: {e}", family.id)))?;
    Ok(DatasetRecord {
        id: format!("doc-{doc_index:05}"),
        layout_family: family.id.clone(),
        pages: vec![page],
        extra: BTreeMap::new(),
    })
}

/// Deterministic given `cfg.seed`. Documents are assigned to families
/// round-robin.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let families: Vec<Family> = (0..cfg.families)
        .map(|i| make_family(i, cfg, &mut rng))
        .collect();
    (0..cfg.documents)
        .map(|i| draw_document(&families[i % cfg.families], cfg, i, &mut rng))
        .collect()
}
