//! Seeded synthetic Darja corpus: intent templates in both scripts with
//! orthographic noise of the kind the normalizer is meant to absorb.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, LabeledExample};
use crate::normalize::{RawUtterance, Script};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub intents: usize,
    pub per_intent: usize,
    /// Share of each intent's utterances written in Arabic script.
    pub arabic_share: f64,
    /// Probability that each noise operator fires on an utterance.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            intents: 20,
            per_intent: 60,
            arabic_share: 0.4,
            noise: 0.35,
            seed: 2024,
        }
    }
}

struct IntentTemplates {
    name: &'static str,
    latin: &'static [&'static str],
    arabic: &'static [&'static str],
}

/// Slot fillers. A template slot `{name}` draws uniformly from the list;
/// empty entries make the slot optional.
const SLOTS: &[(&str, &[&str])] = &[
    ("greet", &["", "", "salam", "slm", "bonjour", "salam alikoum", "ahlan"]),
    ("pol", &["", "", "svp", "3afak", "khoya", "khti", "merci", "stp"]),
    ("offer", &["PixX 1000", "PixX 2000", "Win 500", "Win 1500", "Sama 200", "Sama Roaming"]),
    ("amount", &["100", "200", "500", "1000", "2000"]),
    ("city", &["Alger", "Oran", "Setif", "Annaba", "Blida", "Bejaia", "Tlemcen"]),
    ("want", &["nheb", "bghit", "hab", "n7ab"]),
    ("how", &["kifash", "kifach", "kif", "ki"]),
    ("agreet", &["", "", "السلام", "سلام", "السلام عليكم", "اهلا"]),
    ("apol", &["", "", "خويا", "من فضلك", "عافاك", "ختي"]),
    ("awant", &["نحب", "بغيت", "حاب"]),
    ("ahow", &["كيفاش", "كيف"]),
    ("aoffer", &["بيكس 1000", "وين 500", "سما 200", "سما رومينغ"]),
    ("acity", &["الجزائر", "وهران", "سطيف", "عنابة", "البليدة", "تلمسان"]),
];

const INTENTS: &[IntentTemplates] = &[
    IntentTemplates {
        name: "activate_roaming",
        latin: &[
            "{greet} {want} nactivi roaming {pol}",
            "{how} n'activer le roaming f l'etranger",
            "rani msafer {want} roaming yekhdem",
            "roaming ma khdamch 3andi f l'etranger {pol}",
        ],
        arabic: &["{agreet} {awant} نفعل الرومينغ {apol}", "{ahow} نشعل الرومينغ في الخارج", "راني مسافر و الرومينغ ما خدمش"],
    },
    IntentTemplates {
        name: "balance_check",
        latin: &[
            "{greet} ch7al rasidi {pol}",
            "{want} na3ref ch7al b9ali f rasid",
            "wach b9a f le solde ta3i",
            "chhal 3andi credit {pol}",
        ],
        arabic: &["{agreet} شحال الرصيد تاعي {apol}", "{awant} نعرف شحال بقالي في الرصيد", "واش بقا في الصولد"],
    },
    IntentTemplates {
        name: "billing_complaint",
        latin: &[
            "{greet} la facture ghalia bezzaf {pol}",
            "khlsouni ktar men l3ada f la facture",
            "kesrouli rasidi bla ma nesta3mel walou",
            "{want} nechki 3la la facture ta3 had chhar",
        ],
        arabic: &["{agreet} الفاتورة غالية بزاف {apol}", "كلاولي الرصيد بلا ما نستعمل والو", "{awant} نشكي على الفاتورة"],
    },
    IntentTemplates {
        name: "call_forwarding",
        latin: &[
            "{how} nactivi renvoi d'appel {pol}",
            "{want} ndir transfert d'appel l numero akhor",
            "renvoi d'appel kifah ndirou",
            "{greet} {want} n7abes renvoi d'appel",
        ],
        arabic: &["{ahow} نفعل تحويل المكالمات {apol}", "{awant} نحول المكالمات لنومرو اخر", "{agreet} نحب نحبس تحويل المكالمات"],
    },
    IntentTemplates {
        name: "change_offer",
        latin: &[
            "{greet} {want} nbeddel l'offre ta3i l {offer}",
            "{how} nbeddel l forfait {offer} {pol}",
            "{want} npassi l {offer} w nkhalli l'offre l9dima",
            "changement d'offre l {offer} {pol}",
        ],
        arabic: &["{agreet} {awant} نبدل العرض تاعي {apol}", "{ahow} نبدل الفورفي ل {aoffer}", "{awant} نبدل ل {aoffer}"],
    },
    IntentTemplates {
        name: "customer_service",
        latin: &[
            "{greet} {want} nehder m3a conseiller {pol}",
            "{how} n3ayet l service client",
            "numero ta3 service client wach howa",
            "{want} nkellem wa7ed men l'equipe {pol}",
        ],
        arabic: &["{agreet} {awant} نهدر مع مستشار {apol}", "{ahow} نعيط لخدمة الزبائن", "واش هو نومرو خدمة الزبائن"],
    },
    IntentTemplates {
        name: "data_balance",
        latin: &[
            "{greet} ch7al b9ali men internet {pol}",
            "ch7al men Go 3andi",
            "{want} na3ref volume internet li b9ali",
            "les Go ta3i wach b9a menhom",
        ],
        arabic: &["{agreet} شحال بقالي من الانترنت {apol}", "شحال من جيغا عندي", "{awant} نعرف شحال بقا من الانترنت"],
    },
    IntentTemplates {
        name: "goodbye",
        latin: &["bslama {pol}", "netla9aw {pol}", "yallah bslama", "a bientot", "beslama w ya3tik sa7a"],
        arabic: &["بسلامة {apol}", "نتلاقاو", "يالله بسلامة"],
    },
    IntentTemplates {
        name: "greeting",
        latin: &["salam {pol}", "salam alikoum", "sba7 lkhir", "wach rak {pol}", "bonsoir {pol}", "ahlan kirak"],
        arabic: &["السلام عليكم {apol}", "صباح الخير", "واش راك {apol}", "مساء الخير"],
    },
    IntentTemplates {
        name: "internet_issue",
        latin: &[
            "{greet} internet ma yemchich {pol}",
            "connexion ta3i ta7et bezzaf",
            "la 4G ma tekhdemch 3andi",
            "internet 9ate3 men lbare7 {pol}",
        ],
        arabic: &["{agreet} الانترنت ما راهيش تمشي {apol}", "الكونكسيون طايحة بزاف", "الفور جي ما تخدمش عندي"],
    },
    IntentTemplates {
        name: "network_coverage",
        latin: &[
            "{greet} makach reseau f {city} {pol}",
            "reseau ma kaynch f {city}",
            "la couverture f {city} dayra hala",
            "ma kaynch signal 3andna f {city}",
        ],
        arabic: &["{agreet} ماكانش الريزو في {acity} {apol}", "الريزو ماكاينش في {acity}", "ماكانش سينيال عندنا في {acity}"],
    },
    IntentTemplates {
        name: "offer_info",
        latin: &[
            "{greet} wach fiha l'offre {offer} {pol}",
            "ch7al soum {offer}",
            "{offer} ch7al fiha men Go",
            "les details ta3 {offer} {pol}",
        ],
        arabic: &["{agreet} واش فيه العرض {aoffer} {apol}", "شحال سومة {aoffer}", "التفاصيل تاع {aoffer}"],
    },
    IntentTemplates {
        name: "password_reset",
        latin: &[
            "{greet} nsit mot de passe ta3 l'espace client {pol}",
            "{how} nbeddel le mot de passe",
            "ma nigdarch nodkhol l compte ta3i",
            "{want} reinitialiser mot de passe {pol}",
        ],
        arabic: &["{agreet} نسيت كلمة السر تاع الحساب {apol}", "{ahow} نبدل كلمة السر", "ما نقدرش ندخل للحساب تاعي"],
    },
    IntentTemplates {
        name: "porting",
        latin: &[
            "{greet} {want} nji l Dzair Mobile b numero ta3i",
            "portabilite ta3 numero {how} ndirha",
            "{want} nbeddel l'operateur w nkhalli numero",
            "{how} ndir la portabilite {pol}",
        ],
        arabic: &["{agreet} {awant} نجي لجزائر موبايل بالنومرو تاعي", "{ahow} نبدل المتعامل و نخلي النومرو", "البورتابيليتي {ahow} نديرها"],
    },
    IntentTemplates {
        name: "puk_code",
        latin: &[
            "{greet} {want} code puk ta3i {pol}",
            "la puce tbloquat {want} le puk",
            "puk code ta3 la carte sim",
            "sim bloquee ktebt code ghalet",
        ],
        arabic: &["{agreet} {awant} كود بوك تاعي {apol}", "الپيس تبلوكات حاب البوك", "كتبت الكود غالط و السيم تبلوكات"],
    },
    IntentTemplates {
        name: "recharge_flexy",
        latin: &[
            "{greet} {how} nchargi flexy {pol}",
            "{want} ndir flexy b {amount} DA",
            "{how} nrechargi b carte {amount}",
            "recharge ta3 {amount} DA ma dkhletch",
        ],
        arabic: &["{agreet} {ahow} نشحن الرصيد {apol}", "{awant} نشحن ب {amount} دينار", "الفليكسي تاع {amount} ما دخلتش"],
    },
    IntentTemplates {
        name: "sim_replacement",
        latin: &[
            "{greet} {want} puce jdida {pol}",
            "la puce ta3i tkassret {want} we7da jdida",
            "ddit sim jdida w numero ta3i ma khdamch",
            "{how} nbeddel la carte sim",
        ],
        arabic: &["{agreet} {awant} پيس جديدة {apol}", "السيم تاعي تكسرت {awant} وحدة جديدة", "{ahow} نبدل السيم"],
    },
    IntentTemplates {
        name: "sms_issue",
        latin: &[
            "{greet} les sms ma yweslouch {pol}",
            "ma nigdarch nab3at sms",
            "sms ma rahomch yekhedmou 3andi",
            "messages ma yetb3atouch {pol}",
        ],
        arabic: &["{agreet} المساجات ما يوصلوش {apol}", "ما نقدرش نبعث مساج", "المساجات ما راهمش يخدمو"],
    },
    IntentTemplates {
        name: "thanks",
        latin: &["saha khoya merci", "ya3tik sa7a {pol}", "merci bezzaf", "barak allah fik", "chokran {pol}"],
        arabic: &["يعطيك الصحة {apol}", "شكرا بزاف", "بارك الله فيك"],
    },
    IntentTemplates {
        name: "transfer_credit",
        latin: &[
            "{greet} {how} nab3at rasid l sa7bi {pol}",
            "{want} ndir transfert ta3 {amount} DA",
            "transfert de credit {how} ndirou",
            "{want} nab3at {amount} DA l numero akhor",
        ],
        arabic: &["{agreet} {ahow} نبعث الرصيد لصاحبي {apol}", "{awant} نحول {amount} دينار", "{awant} نبعث الرصيد لنومرو اخر"],
    },
];

/// Names of all available synthetic intents, sorted.
pub fn intent_names() -> Vec<&'static str> {
    INTENTS.iter().map(|t| t.name).collect()
}

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(template.len() + 16);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("template slots are closed");
        let name = &rest[open + 1..close];
        let (_, values) = SLOTS.iter().find(|(n, _)| *n == name).expect("template slot is defined");
        out.push_str(values.choose(rng).expect("slot lists are non-empty"));
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Stretch one random letter into a run of 3 to 6.
pub fn repeat_run(text: &str, rng: &mut impl Rng) -> String {
    let letters: Vec<usize> = text.char_indices().filter(|(_, c)| c.is_alphabetic()).map(|(i, _)| i).collect();
    let Some(&at) = letters.choose(rng) else {
        return text.to_string();
    };
    let c = text[at..].chars().next().expect("index points at a char");
    let run = rng.random_range(3..=6);
    let mut out = String::with_capacity(text.len() + run * c.len_utf8());
    out.push_str(&text[..at]);
    out.extend(std::iter::repeat_n(c, run));
    out.push_str(&text[at + c.len_utf8()..]);
    out
}

/// Rewrite some `a`, `h` and `q` letters as the Arabizi digits 3, 7 and 9.
pub fn arabizi_digits(text: &str, rng: &mut impl Rng) -> String {
    text.chars()
        .map(|c| match c {
            'a' if rng.random_bool(0.3) => '3',
            'h' if rng.random_bool(0.5) => '7',
            'q' if rng.random_bool(0.5) => '9',
            _ => c,
        })
        .collect()
}

/// Replace some plain Alefs with hamza or madda variants.
pub fn alef_swap(text: &str, rng: &mut impl Rng) -> String {
    const VARIANTS: [char; 4] = ['\u{0622}', '\u{0623}', '\u{0625}', '\u{0671}'];
    text.chars()
        .map(|c| if c == '\u{0627}' && rng.random_bool(0.5) { *VARIANTS.choose(rng).expect("non-empty") } else { c })
        .collect()
}

/// Uppercase some letters, or whole words.
pub fn random_case(text: &str, rng: &mut impl Rng) -> String {
    text.split(' ')
        .map(|w| {
            if rng.random_bool(0.2) {
                w.to_uppercase()
            } else {
                w.chars().map(|c| if rng.random_bool(0.15) { c.to_uppercase().next().unwrap_or(c) } else { c }).collect()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn utterance(t: &IntentTemplates, arabic: bool, noise: f64, rng: &mut ChaCha8Rng) -> String {
    let templates = if arabic { t.arabic } else { t.latin };
    let mut text = fill(templates.choose(rng).expect("templates are non-empty"), rng);
    if rng.random_bool(noise) {
        text = repeat_run(&text, rng);
    }
    if arabic {
        if rng.random_bool(noise) {
            text = alef_swap(&text, rng);
        }
    } else {
        if rng.random_bool(noise) {
            text = arabizi_digits(&text, rng);
        }
        if rng.random_bool(noise) {
            text = random_case(&text, rng);
        }
    }
    text
}

/// Generate `per_intent` utterances for each of the first `intents`
/// intents. The dataset mixes both scripts and is tagged Latin, the
/// majority script.
pub fn generate(config: &SynthConfig) -> Dataset {
    assert!(config.intents <= INTENTS.len(), "only {} synthetic intents exist", INTENTS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arabic_count = (config.per_intent as f64 * config.arabic_share).round() as usize;
    let mut examples = Vec::with_capacity(config.intents * config.per_intent);
    for t in &INTENTS[..config.intents] {
        for k in 0..config.per_intent {
            let arabic = k < arabic_count;
            let text = utterance(t, arabic, config.noise, &mut rng);
            examples.push(LabeledExample {
                utterance: RawUtterance::tagged(text, if arabic { "synth:arabic" } else { "synth:latin" }),
                intent: t.name.to_string(),
                augmented: false,
            });
        }
    }
    Dataset::new(examples, Script::Latin)
}
