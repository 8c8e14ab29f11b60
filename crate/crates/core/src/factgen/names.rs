//! Word lists for synthetic company names, person names and book titles.

/// Region name and the longitude of its centre.
pub const REGIONS: [(&str, f64); 24] = [
    ("Beijing", 116.407526),
    ("Shanghai", 121.473701),
    ("Zhangjiajie", 110.479191),
    ("Changsha", 112.938814),
    ("Chengdu", 104.066541),
    ("Wuhan", 114.305392),
    ("Hangzhou", 120.155070),
    ("Nanjing", 118.796877),
    ("Xian", 108.939770),
    ("Kunming", 102.832892),
    ("Harbin", 126.534967),
    ("Urumqi", 87.616848),
    ("Lhasa", 91.140856),
    ("Xiamen", 118.089425),
    ("Qingdao", 120.382640),
    ("Dalian", 121.614682),
    ("Lanzhou", 103.834170),
    ("Nanning", 108.366543),
    ("Haikou", 110.198293),
    ("Hohhot", 111.749180),
    ("Guiyang", 106.630153),
    ("Shenyang", 123.431475),
    ("Fuzhou", 119.296494),
    ("Yinchuan", 106.230909),
];

/// Business line and the capital-bucket exponents typical for it.
pub const BUSINESSES: [(&str, &[u32]); 16] = [
    ("Fruit Shop", &[4, 5]),
    ("Tea House", &[4, 5]),
    ("Bakery", &[4, 5]),
    ("Hardware", &[5, 6]),
    ("Printing", &[5, 6]),
    ("Logistics", &[6, 7]),
    ("Textile", &[6, 7]),
    ("Software", &[6, 7]),
    ("Pharma", &[7, 8]),
    ("Mining", &[7, 8]),
    ("Investment", &[7, 8, 9]),
    ("Real Estate", &[8, 9]),
    ("Catering", &[5, 6]),
    ("Trading", &[5, 6, 7]),
    ("Media", &[6, 7]),
    ("Robotics", &[7, 8]),
];

pub const SUFFIXES: [&str; 4] = ["Co.", "Ltd.", "Inc.", "Group"];

pub const BRAND_SYLLABLES: [&str; 40] = [
    "an", "bao", "chen", "da", "fa", "feng", "fu", "guang", "hai", "heng", "hong", "hua", "jia", "jin",
    "kang", "li", "long", "mei", "ming", "nan", "ping", "qi", "rui", "sheng", "shun", "tai", "tian", "wei",
    "xin", "xing", "ya", "yang", "yi", "yong", "yu", "yuan", "ze", "zhi", "zhong", "zi",
];

pub const SURNAMES: [&str; 32] = [
    "Zhang", "Wang", "Li", "Liu", "Chen", "Yang", "Zhao", "Huang", "Zhou", "Wu", "Xu", "Sun", "Hu", "Zhu",
    "Gao", "Lin", "He", "Guo", "Ma", "Luo", "Liang", "Song", "Zheng", "Xie", "Han", "Tang", "Feng", "Yu",
    "Dong", "Xiao", "Cheng", "Cao",
];

pub const GIVEN_NAMES: [&str; 40] = [
    "Lidong", "Wei", "Fang", "Na", "Min", "Jing", "Lei", "Yan", "Jun", "Tao", "Ming", "Chao", "Xiu",
    "Hui", "Qiang", "Ping", "Gang", "Hong", "Bo", "Dan", "Xin", "Yu", "Jie", "Lan", "Ying", "Hao", "Kai",
    "Rong", "Shan", "Ting", "Wen", "Xia", "Yun", "Zhen", "Bin", "Cong", "Di", "Feng", "Guang", "Hua",
];

pub const TITLE_WORDS: [&str; 24] = [
    "Silent", "Golden", "Distant", "Broken", "Hidden", "Northern", "Crimson", "Endless", "Quiet", "Wild",
    "River", "Mountain", "Garden", "Winter", "Harbor", "Lantern", "Echo", "Bridge", "Orchard", "Storm",
    "Mirror", "Valley", "Ember", "Tide",
];
