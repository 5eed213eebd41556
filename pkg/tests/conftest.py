import pytest

from services.acctree import AccessibilityTree, AccNode
from services.corpus_service import clean_corpus, collect_corpus, to_raw
from services.task_service import ExpertStore, generate_tasks
from services.web_env import WebEnvironment
from services.world_model import train_wm


@pytest.fixture(scope="session")
def tasks():
    return generate_tasks(seed=7, n=6)


@pytest.fixture(scope="session")
def store(tasks):
    return ExpertStore.from_tasks(tasks)


@pytest.fixture(scope="session")
def corpus(tasks):
    return collect_corpus(WebEnvironment(), tasks, 120, seed=0)


@pytest.fixture(scope="session")
def wm(corpus):
    return train_wm(corpus, alpha=0.1, seed=0)


@pytest.fixture(scope="session")
def shop_suite():
    """20 shop tasks and a world model fitted to a cleaned 2000-transition corpus."""
    tasks = generate_tasks(seed=0, n=20, kinds=("shop",))
    raw = to_raw(collect_corpus(WebEnvironment(), tasks, 2000, seed=0))
    return tasks, train_wm(clean_corpus(raw).corpus, alpha=0.1, seed=0)


@pytest.fixture
def small_tree():
    return AccessibilityTree(
        AccNode(
            1,
            "root",
            "Home",
            False,
            (
                AccNode(2, "heading", "Home"),
                AccNode(3, "link", "Red Kettle"),
                AccNode(4, "textbox", "", True),
            ),
        ),
        "http://shop-1.local/home",
    )
