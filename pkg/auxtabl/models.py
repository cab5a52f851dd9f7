'''
Networks built from BL/TABL or convolution layers, the topology registry,
model augmentation and folding, and the parameter and operation ledgers.

A TABL network is a stack of BL hidden layers followed by a TABL prediction
layer with output (3, 1). A CNN is a stack of convolutions followed by a
dense softmax head. Parameters are addressed by qualified names such as
'layer0.W1'.
'''

import logging
from collections import OrderedDict, namedtuple

import numpy as np

from auxtabl import adapters, conv, layers, linalg
from auxtabl.errors import ConfigException, ShapeException

logger = logging.getLogger(__name__)

TABL_ARCH = 'tabl'
CNN_ARCH = 'cnn'
ARCHITECTURES = (TABL_ARCH, CNN_ARCH)

INPUT_SHAPE = (40, 10)
OUTPUT_SHAPE = (3, 1)

BL = 'BL'
TABL = 'TABL'
CONV = 'Conv'
DENSE = 'Dense'

LayerSpec = namedtuple('LayerSpec', ['kind', 'shape'])


class Topology:
    '''
    Ordered layer specs. BL and TABL specs carry their output shape
    (D', T'); Conv specs carry (filters, kernel); the Dense head carries
    (classes, 1).
    '''

    def __init__(self, layer_specs, input_shape=INPUT_SHAPE, padding=conv.SAME, stride=1):
        self.layers = [LayerSpec(kind, tuple(int(v) for v in shape)) for kind, shape in layer_specs]
        self.input_shape = tuple(input_shape)
        self.padding = padding
        self.stride = stride
        self.validate()

    @property
    def architecture(self):
        return CNN_ARCH if any(spec.kind == CONV for spec in self.layers) else TABL_ARCH

    @classmethod
    def from_dims(cls, dims, input_shape=INPUT_SHAPE):
        '''
        `dims` lists output shapes; every layer but the last is a BL and the
        last is a TABL.
        '''
        dims = [tuple(d) for d in dims]
        if not dims:
            raise ConfigException('A topology needs at least one layer')
        specs = [(BL, d) for d in dims[:-1]] + [(TABL, dims[-1])]
        return cls(specs, input_shape)

    @classmethod
    def from_hidden(cls, hidden, input_shape=INPUT_SHAPE):
        return cls.from_dims(list(hidden) + [OUTPUT_SHAPE], input_shape)

    @classmethod
    def from_cnn(cls, arch):
        specs = [(CONV, layer) for layer in arch.conv_layers] + [(DENSE, (arch.classes, 1))]
        return cls(specs, arch.input_shape, arch.padding, arch.stride)

    def to_cnn(self):
        return conv.CnnArchSpec([spec.shape for spec in self.layers[:-1]], self.input_shape,
                                self.layers[-1].shape[0], self.stride, self.padding)

    def dims(self):
        return [list(spec.shape) for spec in self.layers]

    def validate(self):
        if not self.layers:
            raise ConfigException('A topology needs at least one layer')
        kinds = [spec.kind for spec in self.layers]
        unknown = set(kinds) - {BL, TABL, CONV, DENSE}
        if unknown:
            raise ConfigException('Unknown layer kinds {}'.format(sorted(unknown)))
        for spec in self.layers:
            if any(v < 1 for v in spec.shape):
                raise ShapeException('Layer {} has a non-positive dimension'.format(spec))
        if CONV in kinds:
            if kinds[-1] != DENSE or set(kinds[:-1]) != {CONV}:
                raise ConfigException('A CNN is convolutions followed by one dense head, got {}'.format(kinds))
            shape = self.input_shape
            for spec in self.layers[:-1]:
                filters, kernel = spec.shape
                shape = (filters, conv.output_length(shape[1], kernel, self.stride, self.padding))
        elif DENSE in kinds:
            raise ConfigException('A dense head follows convolutions only')
        if tuple(self.layers[-1].shape) != OUTPUT_SHAPE:
            raise ShapeException('The last layer must output {}, got {}'.format(
                OUTPUT_SHAPE, self.layers[-1].shape))

    def to_dict(self):
        return {
            'layers': [[spec.kind, list(spec.shape)] for spec in self.layers],
            'input_shape': list(self.input_shape),
            'padding': self.padding,
            'stride': self.stride,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d['layers'], tuple(d.get('input_shape', INPUT_SHAPE)),
                   d.get('padding', conv.SAME), d.get('stride', 1))

    def __eq__(self, other):
        return isinstance(other, Topology) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return 'Topology({})'.format(self.dims())


def _registry():
    named = OrderedDict()
    named['joint_all'] = Topology.from_hidden([[60, 10], [120, 5]])
    named['base_stock1'] = Topology.from_hidden([[60, 5], [200, 10]])
    named['base_stock2'] = Topology.from_hidden([[60, 10], [120, 5]])
    named['base_stock3'] = Topology.from_hidden([[60, 5], [120, 10], [50, 5]])
    named['base_stock4'] = Topology.from_hidden([[60, 10], [200, 10]])
    named['base_stock5'] = Topology.from_hidden([[60, 10], [200, 10]])
    named['cnn'] = Topology.from_cnn(conv.DEFAULT_CNN)
    return named


def registry():
    '''
    Named topologies: the best base network per target stock, the network
    trained on all stocks, and the default CNN.
    '''
    return _registry()


def lookup(name):
    named = registry()
    if name not in named:
        raise ConfigException('Unknown topology "{}". Known topologies: {}'.format(
            name, ', '.join(named)))
    return named[name]


ABLATION_HIDDEN = (
    [[60, 5], [200, 10]],
    [[60, 10], [120, 5]],
    [[60, 5], [120, 10], [50, 5]],
    [[60, 10], [200, 10]],
    [[50, 10], [250, 5]],
    [[60, 10], [200, 5]],
)


def ablation_candidates():
    '''
    Candidate base topologies for the per-target ablation, keyed by a name
    listing their hidden layers.
    '''
    return OrderedDict(('layers_{}'.format(hidden), Topology.from_hidden(hidden))
                       for hidden in ABLATION_HIDDEN)


def resolve_topology(value, cnn=None):
    '''
    A Topology from a registry name, an explicit list of output shapes, or
    a CnnArchSpec when the value is 'cnn' and `cnn` is given.
    '''
    if isinstance(value, Topology):
        return value
    if isinstance(value, str):
        if value == CNN_ARCH and cnn is not None:
            return Topology.from_cnn(cnn)
        return lookup(value)
    return Topology.from_dims(value)


class Model:
    '''
    A network: its topology, layer objects and provenance metadata (kind of
    model, base hash, rank, strategy, normalization statistics).
    '''

    def __init__(self, topology, layer_list, provenance=None):
        self.topology = topology
        self.layers = list(layer_list)
        self.provenance = {} if provenance is None else dict(provenance)
        shape = topology.input_shape
        for index, layer in enumerate(self.layers):
            if tuple(layer.input_shape) != tuple(shape):
                raise ShapeException('Layer {} expects input {} but receives {}'.format(
                    index, layer.input_shape, shape))
            shape = layer.output_shape
        if tuple(shape) != OUTPUT_SHAPE:
            raise ShapeException('Model output {} is not {}'.format(shape, OUTPUT_SHAPE))

    @property
    def is_augmented(self):
        return any(hasattr(layer, 'aux') for layer in self.layers)

    def forward(self, X, mode=layers.INFER, counter=None):
        '''
        Returns (probabilities of shape (..., 3, 1), per-layer caches).
        '''
        caches = []
        for layer in self.layers:
            X, cache = layer.forward(X, mode, counter)
            caches.append(cache)
        return X, caches

    def backward(self, caches, dY):
        '''
        Gradients of the trainable parameters keyed by qualified name.
        '''
        collected = {}
        for index in reversed(range(len(self.layers))):
            grads, dY = self.layers[index].backward(caches[index], dY)
            for name, g in grads.items():
                collected[qualified(index, name)] = g
        return OrderedDict((name, collected[name]) for name in self.named_arrays() if name in collected)

    def predict_proba(self, X):
        probs, _ = self.forward(X, layers.INFER)
        return probs[..., 0]

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=-1)

    def named_arrays(self):
        named = OrderedDict()
        for index, layer in enumerate(self.layers):
            for name, a in layer.arrays().items():
                named[qualified(index, name)] = a
        return named

    def trainable_masks(self):
        masks = OrderedDict()
        for index, layer in enumerate(self.layers):
            for name, mask in layer.trainable_masks().items():
                masks[qualified(index, name)] = mask
        return masks

    def base_arrays(self):
        named = OrderedDict()
        for index, layer in enumerate(self.layers):
            base = getattr(layer, 'base', layer)
            for name, a in base.arrays().items():
                named[qualified(index, name)] = a
        return named

    def aux_arrays(self):
        named = OrderedDict()
        for index, layer in enumerate(self.layers):
            if hasattr(layer, 'aux'):
                for name, a in layer.aux.arrays().items():
                    named[qualified(index, name)] = a
        return named

    def base_hash(self):
        return linalg.array_hash(self.base_arrays())

    def copy(self):
        return Model(self.topology, [layer.copy() for layer in self.layers], self.provenance)


def qualified(index, name):
    return 'layer{}.{}'.format(index, name)


def split_name(qualified_name):
    prefix, name = qualified_name.split('.', 1)
    return int(prefix[len('layer'):]), name


def build_layers(topology, rng):
    if topology.architecture == CNN_ARCH:
        return conv.cnn_layers(topology.to_cnn(), rng)
    result = []
    shape = topology.input_shape
    for index, spec in enumerate(topology.layers):
        last = index == len(topology.layers) - 1
        activation = layers.SOFTMAX_COLUMNS if last else layers.RELU
        if spec.kind == BL:
            layer = layers.BlLayerParams.initialize(shape, spec.shape, rng, activation)
        else:
            layer = layers.TablLayerParams.initialize(shape, spec.shape, rng, activation)
        result.append(layer)
        shape = layer.output_shape
    return result


def build(topology, seed=0):
    '''
    A freshly initialized network. The same topology and seed always give
    identical parameters.
    '''
    if not isinstance(topology, Topology):
        topology = resolve_topology(topology)
    rng = np.random.default_rng(seed)
    model = Model(topology, build_layers(topology, rng), provenance={'kind': 'base', 'seed': seed})
    logger.debug('Built %s with %d parameters.', topology, count_params(model).base)
    return model


def layer_max_rank(layer):
    '''
    Largest rank of the auxiliary factors for a plain layer, or None when
    unbounded.
    '''
    if layer.kind in (BL, TABL):
        return adapters.max_rank(layer.input_shape, layer.output_shape)
    if layer.kind == DENSE:
        return min(layer.W.shape)
    return None


def layer_rank(layer, rank):
    bound = layer_max_rank(layer)
    return rank if bound is None else min(rank, bound)


def augment_layer(layer, rank, rng, strategy=adapters.IS2, train_lambda=False):
    rank = layer_rank(layer, rank)
    if layer.kind in (BL, TABL):
        aux = adapters.AuxFactors.initialize(layer, rank, rng)
        return adapters.AugmentedTablLayer(layer.copy(), aux, strategy, train_lambda)
    if layer.kind == CONV:
        return conv.AugmentedConv1dLayer(layer.copy(), conv.CpAuxFilters.initialize(layer, rank, rng),
                                         strategy)
    if layer.kind == DENSE:
        return conv.AugmentedDenseLayer(layer.copy(), conv.DenseAux.initialize(layer, rank, rng),
                                        strategy)
    raise ConfigException('Cannot augment a layer of kind {}'.format(layer.kind))


def augment(model, rank, strategy=adapters.IS2, seed=0, train_lambda=False):
    '''
    A copy of `model` with frozen base weights and trainable auxiliary
    factors on every layer. `rank` is clamped per layer to what the layer's
    dimensions allow.
    '''
    adapters.check_strategy(strategy)
    if rank < 1:
        raise ConfigException('Rank must be at least 1, got {}'.format(rank))
    if model.is_augmented:
        raise ConfigException('Model is already augmented')
    rng = np.random.default_rng(seed)
    new_layers = [augment_layer(layer, rank, rng, strategy, train_lambda)
                  for layer in model.layers]
    provenance = dict(model.provenance)
    provenance.update(
        kind='augmented', base_hash=model.base_hash(), rank=rank, strategy=strategy,
        train_lambda=train_lambda, layer_ranks=[layer.aux.rank for layer in new_layers])
    return Model(model.topology, new_layers, provenance)


def fold_model(model):
    '''
    A plain model computing the same function as an augmented one, with the
    base model's size and inference cost.
    '''
    if not model.is_augmented:
        raise ConfigException('Only augmented models can be folded')
    provenance = dict(model.provenance)
    provenance['kind'] = 'folded'
    return Model(model.topology, [layer.fold() for layer in model.layers], provenance)


def set_strategy(model, strategy):
    adapters.check_strategy(strategy)
    for layer in model.layers:
        if hasattr(layer, 'strategy'):
            layer.strategy = strategy
    model.provenance['strategy'] = strategy
    return model


ParamRow = namedtuple('ParamRow', ['layer', 'kind', 'base', 'aux', 'total'])


class ParamLedger:
    '''
    Parameter counts per layer. `folded` is what the model occupies after
    folding, which is the base count.
    '''

    HEADER = ['layer', 'kind', 'base', 'aux', 'total']

    def __init__(self, rows):
        self.rows = rows

    @property
    def base(self):
        return sum(r.base for r in self.rows)

    @property
    def aux(self):
        return sum(r.aux for r in self.rows)

    @property
    def total(self):
        return self.base + self.aux

    @property
    def folded(self):
        return self.base

    def csv_rows(self):
        return [list(r) for r in self.rows] + [['total', '', self.base, self.aux, self.total]]


def count_params(model, count_fixed_diagonal=True):
    rows = []
    for index, layer in enumerate(model.layers):
        base = getattr(layer, 'base', layer)
        aux = layer.aux.param_count() if hasattr(layer, 'aux') else 0
        n = base.param_count(count_fixed_diagonal)
        rows.append(ParamRow(index, layer.kind, n, aux, n + aux))
    return ParamLedger(rows)


MacRow = namedtuple('MacRow', ['layer', 'kind', 'tag', 'macs'])


class MacLedger:

    HEADER = ['layer', 'kind', 'tag', 'macs']

    def __init__(self, rows):
        self.rows = rows

    @property
    def total(self):
        return sum(r.macs for r in self.rows)

    def by_tag(self):
        tags = OrderedDict()
        for r in self.rows:
            tags[r.tag] = tags.get(r.tag, 0) + r.macs
        return tags

    def csv_rows(self):
        return [list(r) for r in self.rows] + [['total', '', '', self.total]]


def _dims(layer):
    D, T = layer.input_shape
    d_out, t_out = layer.output_shape
    return D, d_out, T, t_out


def layer_macs(layer, N):
    '''
    Closed-form forward operation counts of one layer for a batch of N,
    keyed by tag.
    '''
    kind = layer.kind
    plain = getattr(layer, 'base', layer)
    if kind in (BL, TABL):
        D, d_out, T, t_out = _dims(layer)
        counts = OrderedDict([(layers.FEATURE_TAG, N * D * d_out * T)])
        if kind == TABL:
            counts[layers.ATTENTION_TAG] = N * d_out * T * T
        counts[layers.OUTPUT_TAG] = N * d_out * T * t_out + 2 * N * d_out * t_out
        return counts
    if kind in ('aBL', 'aTABL'):
        dims = _dims(layer)
        attention = kind == 'aTABL'
        if layer.strategy == adapters.IS1:
            return adapters.is1_forward_macs(N, *dims, layer.aux.rank, attention=attention)
        return adapters.is2_forward_macs(N, *dims, layer.aux.rank, attention=attention)
    if kind in (CONV, 'aConv'):
        filters, channels, kernel = plain.filters.shape
        length = plain.input_length
        t_out = plain.output_shape[1]
        counts = OrderedDict([
            (conv.CONV_TAG, N * filters * channels * kernel * t_out),
            (conv.CONV_OUTPUT_TAG, 2 * N * filters * t_out),
        ])
        if kind == 'aConv':
            K = layer.aux.rank
            if layer.strategy == adapters.IS1:
                counts[adapters.MATERIALIZE_TAG] = filters * channels * kernel * K
            else:
                counts[conv.CONV_TAG] += N * K * (channels * length + kernel * t_out + filters * t_out)
        return counts
    classes, flat = plain.W.shape
    counts = OrderedDict([(conv.DENSE_TAG, conv.dense_forward_macs(N, flat, classes))])
    if kind == 'aDense':
        K = layer.aux.rank
        if layer.strategy == adapters.IS1:
            counts[adapters.MATERIALIZE_TAG] = classes * K * flat
        else:
            counts[conv.DENSE_TAG] += N * K * flat + N * classes * K
    return counts


def count_macs(model, N=1):
    rows = []
    for index, layer in enumerate(model.layers):
        for tag, macs in layer_macs(layer, N).items():
            rows.append(MacRow(index, layer.kind, tag, macs))
    return MacLedger(rows)


def storage_plan(base_model, adapted_models, finetuned_models, count_fixed_diagonal=True):
    '''
    Parameters stored by three ways of serving the new stocks: the base model
    alone, the base plus one fine-tuned model per stock, and the base plus
    one set of auxiliary factors per stock.
    '''
    base = count_params(base_model, count_fixed_diagonal).base
    return OrderedDict([
        ('base', base),
        ('base+finetuned', base + sum(count_params(m, count_fixed_diagonal).base
                                      for m in finetuned_models)),
        ('base+aux', base + sum(count_params(m, count_fixed_diagonal).aux for m in adapted_models)),
    ])
