"""Static word lists the synthetic sites are generated from."""

SHOP_ITEMS = [
    "Red Kettle",
    "Steel Toaster",
    "Oak Desk",
    "Desk Lamp",
    "Wool Blanket",
    "Camping Stove",
    "Hiking Boots",
    "Rain Jacket",
    "Coffee Grinder",
    "Cast Iron Pan",
    "Chef Knife",
    "Bamboo Cutting Board",
    "Glass Teapot",
    "Ceramic Mug",
    "Bluetooth Speaker",
    "Noise Cancelling Headphones",
    "Mechanical Keyboard",
    "Wireless Mouse",
    "USB Hub",
    "Laptop Stand",
    "Office Chair",
    "Standing Mat",
    "Yoga Mat",
    "Dumbbell Set",
    "Jump Rope",
    "Water Bottle",
    "Lunch Box",
    "Travel Pillow",
    "Sun Hat",
    "Leather Wallet",
    "Canvas Backpack",
    "Umbrella",
    "Alarm Clock",
    "Picture Frame",
    "Scented Candle",
    "Plant Pot",
    "Garden Hose",
    "Tool Kit",
    "Cordless Drill",
    "Bike Helmet",
]

WIKI_TOPICS = [
    "Photosynthesis",
    "Plate Tectonics",
    "Roman Aqueducts",
    "Black Holes",
    "Coral Reefs",
    "The Silk Road",
    "Printing Press",
    "Volcanoes",
    "Honey Bees",
    "Steam Engines",
    "Quantum Tunnelling",
    "Monsoons",
    "Glaciers",
    "Migratory Birds",
    "Prime Numbers",
    "Cartography",
    "Tidal Energy",
    "Ancient Olympics",
    "Fermentation",
    "Lighthouses",
    "Desert Ecology",
    "Jazz History",
    "Glass Blowing",
    "Comets",
    "Rainforests",
    "Bridges",
    "Telescopes",
    "Tea Ceremony",
    "Origami",
    "Wind Turbines",
    "Sourdough",
    "Auroras",
    "Semaphore",
    "Kites",
    "Salt Marshes",
    "Cuneiform",
    "Clockmaking",
    "Beekeeping",
    "Caves",
    "Radio Waves",
]

FORUM_TITLES = [
    "Best beginner telescope",
    "Sourdough starter help",
    "Fixing a squeaky door",
    "Weekend hiking routes",
    "Which keyboard switches",
    "Balcony tomato tips",
    "Learning the ukulele",
    "Bike chain keeps slipping",
    "Cheap travel in spring",
    "Home office lighting",
    "Cold brew ratios",
    "Painting old furniture",
    "Chess opening advice",
    "Rainwater collection",
    "Knitting a first scarf",
    "Quiet dishwasher models",
    "Running in winter",
    "Fermenting hot sauce",
    "Choosing a tent",
    "Reading club picks",
    "Drawing hands",
    "Composting in flats",
    "Birdwatching gear",
    "Sharpening knives",
    "Puzzle recommendations",
    "Starting a podcast",
    "Tiling a bathroom",
    "Houseplant pests",
    "Learning to swim",
    "Camping with dogs",
    "Repairing jeans",
    "Pizza oven temperature",
    "Film camera scans",
    "Bread flour types",
    "Calligraphy pens",
    "Soundproofing a room",
    "Bouldering shoes",
    "Stargazing apps",
    "Homemade pasta",
    "Woodworking clamps",
]

AUTHORS = [
    "alice",
    "bilal",
    "chen",
    "dara",
    "emeka",
    "fatima",
    "greta",
    "hiro",
    "ines",
    "jonas",
    "kofi",
    "lena",
    "mateo",
    "nadia",
    "oscar",
    "priya",
    "quinn",
    "rosa",
    "sami",
    "tomas",
]

WIKI_CATEGORIES = ["Science", "History", "Nature", "Technology", "Culture", "Geography"]

FILLER_PHRASES = [
    "Free delivery on orders this week.",
    "Sign up for our newsletter.",
    "Opening hours: 9am to 5pm.",
    "Last updated recently.",
    "Terms and conditions apply.",
    "Customer reviews are moderated.",
    "See our accessibility statement.",
    "Photos are for illustration only.",
    "Contact support for help.",
    "Prices include tax.",
    "Community guidelines apply.",
    "This page has been viewed many times.",
    "Cookies help us improve the site.",
    "Follow us for updates.",
    "Share this page with friends.",
    "All rights reserved.",
]

HOME_TITLES = {"shop": "Shop Home", "wiki": "Wiki Home", "forum": "Forum Home"}

_TITLES_BY_KIND = {"shop": SHOP_ITEMS, "wiki": WIKI_TOPICS, "forum": FORUM_TITLES}


def get_page_titles(kind: str) -> list[str]:
    return list(_TITLES_BY_KIND.get(kind, []))


def get_home_title(kind: str) -> str:
    return HOME_TITLES.get(kind, "Home")


def get_filler_phrases() -> list[str]:
    return list(FILLER_PHRASES)


def get_authors() -> list[str]:
    return list(AUTHORS)


def get_categories() -> list[str]:
    return list(WIKI_CATEGORIES)
