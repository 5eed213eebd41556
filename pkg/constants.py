ACCESSIBILITY_ROLES = ("root", "link", "button", "textbox", "text", "heading")
INTERACTABLE_ROLES = ("link", "button", "textbox")

INSTRUCTIONS = (
    "You are a web agent. Complete the task by issuing one action per turn: "
    "click [id], type [id] [content] [press_enter_after=0|1], scroll [up|down], "
    "goback, or stop [answer]."
)

# Environment
VIEWPORT_SIZE = 20
SCROLL_STEP = 5
DEFAULT_SITE_PAGES = 10
DEFAULT_SITE_BRANCHING = 3
MAX_FILLER_ELEMENTS = 20
WITNESS_MAX_ACTIONS = 10
CONTENT_VOCAB_SIZE = 8
SITE_KINDS = ("shop", "wiki", "forum")

# Edit scripts
REPLACE_TREE_TURNOVER = 0.5

# World model
DEFAULT_WM_ALPHA = 0.1
ABLATION_HALLUCINATION_RATE = 0.1
WM_CHECKPOINT_VERSION = 1

# Policy
FEATURE_DIM = 2**16
MAX_ELEMS = 32
POLICY_CHECKPOINT_VERSION = 1

# Rollouts and optimisation
DEFAULT_GROUP_SIZE = 8
DEFAULT_TEMPERATURE = 0.7
DEFAULT_TOP_P = 0.9
DEFAULT_MAX_STEPS = 10
DEFAULT_MAX_DREAM = 5
DEFAULT_RHO_EXPERT = 0.5
DEFAULT_EPOCHS = 10
DEFAULT_CLIP_EPSILON = 0.2
DEFAULT_LEARNING_RATE = 0.5
ADVANTAGE_STD_FLOOR = 1e-6

METRICS_COLUMNS = (
    "update",
    "J",
    "mean_return",
    "clip_fraction",
    "expert_fraction",
    "wm_recoveries",
    "wallclock_ms",
)
ABLATION_COLUMNS = ("param", "seed", "final_success_rate")
