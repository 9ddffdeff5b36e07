from sqlalchemy import Boolean, Column, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from ncgg.errors import NcggError

Base = declarative_base()


# Database Models
class DynamicsRun(Base):
    __tablename__ = 'dynamics_runs'

    id = Column(String, primary_key=True)
    instance_name = Column(String, nullable=False)
    epsilon = Column(Float, nullable=False)
    schedule = Column(String, nullable=False)
    seed = Column(Integer)
    k = Column(Integer, nullable=False)
    rounds = Column(Integer, nullable=False)
    total_moves = Column(Integer, nullable=False)
    converged = Column(Boolean, nullable=False)
    worst_gap = Column(Float)
    created_at = Column(String)


class PoaRecord(Base):
    __tablename__ = 'poa_records'

    id = Column(String, primary_key=True)
    n = Column(Integer, nullable=False)
    utility = Column(String, nullable=False)
    epsilon = Column(Float, nullable=False)
    welfare_ne = Column(Float, nullable=False)
    welfare_common = Column(Float)
    ratio = Column(Float, nullable=False)
    clamped = Column(Boolean, default=False)
    created_at = Column(String)


class UniquenessRun(Base):
    __tablename__ = 'uniqueness_runs'

    id = Column(String, primary_key=True)
    instance_name = Column(String, nullable=False)
    strong = Column(Boolean, nullable=False)
    trials = Column(Integer, nullable=False)
    k = Column(Integer, nullable=False)
    max_level_discrepancy = Column(Float, nullable=False)
    max_allocation_discrepancy = Column(Float, nullable=False)
    failed_trials = Column(Text)
    created_at = Column(String)


def make_session_factory(database_url):
    """Create the engine for a database URL, its tables, and a session factory."""
    try:
        engine = create_engine(database_url)
        Base.metadata.create_all(bind=engine)
    except Exception as e:
        raise NcggError(f"Failed to initialize run database {database_url!r}: {str(e)}")
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)
