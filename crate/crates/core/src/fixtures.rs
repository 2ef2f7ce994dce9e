//! Data bundled with the crate: the sample knowledge pack, its labeled
//! questions, response templates and the reference TF-IDF corpus.

/// Twenty short normalized utterances used as the reference corpus for
/// TF-IDF checks.
pub const TFIDF_CORPUS: [&str; 20] = [
    "nheb nactivi roaming",
    "chhal rasidi",
    "kifash nchargi flexy",
    "bghit nbeddel l'offre",
    "pixx 1000 chhal soumha",
    "win 500 fiha internet",
    "sama kifash nactiviha",
    "code puk ta3i drari",
    "rani f l'etranger w roaming ma yemchich",
    "nheb n3ayet l service client",
    "كيفاش نشحن الرصيد",
    "بغيت نفعل الرومينغ",
    "شحال الرصيد تاعي",
    "الانترنت ماراهيش تمشي",
    "نحب نبدل العرض",
    "saha khoya merci",
    "salam alikoum",
    "internet ma yemchich 3andi",
    "nheb ndir transfert ta3 rasid",
    "pixx win sama wach lfar9",
];

/// The sample knowledge pack: a preamble and six offer sections.
pub const OFFERS_MD: &str = include_str!("../data/offers.md");

/// Doc id under which the knowledge pack is ingested.
pub const OFFERS_DOC_ID: &str = "offers";

/// Offer names used to open sections in the knowledge pack.
pub const OFFER_NAMES: [&str; 3] = ["PixX", "Win", "Sama"];

/// `question<TAB>gold chunk id` lines.
pub const QUESTIONS_TSV: &str = include_str!("../data/questions.tsv");

/// The knowledge pack as a markdown source document.
pub fn offers_document() -> crate::ingest::SourceDocument {
    crate::ingest::SourceDocument::new(OFFERS_DOC_ID, "Dzair Mobile offers", OFFERS_MD, crate::ingest::DocFormat::Markdown)
}

/// Labeled fixture questions as (question, gold chunk id).
pub fn labeled_questions() -> Vec<(&'static str, &'static str)> {
    QUESTIONS_TSV
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_once('\t').expect("question lines are tab-separated"))
        .collect()
}

/// `intent<TAB>script<TAB>template` response templates for the synthetic
/// intents.
pub const TEMPLATES_TSV: &str = include_str!("../data/templates.tsv");

/// Synonym lexicon in `token<TAB>r1,r2` form.
pub const LEXICON_TSV: &str = include_str!("../data/lexicon.tsv");

/// Intents answered from the knowledge pack rather than templates.
pub const KNOWLEDGE_INTENTS: [&str; 1] = ["offer_info"];
